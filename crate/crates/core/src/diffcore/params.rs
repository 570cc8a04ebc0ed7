use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Every trainable parameter of a model flattened into one buffer.
///
/// Segments are laid out back to back in declaration order, so they are
/// contiguous, disjoint and cover `values` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<S> {
    segments: Vec<Segment>,
    values: Vec<S>,
}

impl<S: Scalar> ParamVector<S> {
    /// Zero-filled vector for the ordered `(name, shape)` layout.
    pub fn zeros(layout: &[(String, Vec<usize>)]) -> Result<Self> {
        let mut segments = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for (name, shape) in layout {
            if segments.iter().any(|s: &Segment| &s.name == name) {
                return Err(Error::Config(format!("duplicate parameter segment {name:?}")));
            }
            segments.push(Segment {
                name: name.clone(),
                offset,
                shape: shape.clone(),
            });
            offset += numel(shape);
        }
        Ok(ParamVector {
            segments,
            values: vec![S::zero(); offset],
        })
    }

    /// Packs named tensors in order.
    pub fn flatten(named: &[(String, Tensor<S>)]) -> Result<Self> {
        let layout: Vec<_> = named
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        let mut pv = Self::zeros(&layout)?;
        for ((_, t), seg) in named.iter().zip(pv.segments.clone()) {
            pv.values[seg.range()].copy_from_slice(t.data());
        }
        Ok(pv)
    }

    pub fn unflatten(&self) -> Vec<(String, Tensor<S>)> {
        self.segments
            .iter()
            .map(|s| {
                let t = Tensor::new(s.shape.clone(), self.values[s.range()].to_vec())
                    .expect("segment shape matches its range");
                (s.name.clone(), t)
            })
            .collect()
    }

    /// Rebuilds a vector from a layout and a matching flat buffer.
    pub fn from_parts(segments: Vec<Segment>, values: Vec<S>) -> Result<Self> {
        let mut offset = 0;
        for s in &segments {
            if s.offset != offset {
                return Err(Error::Checkpoint(format!(
                    "segment {:?} starts at {} but should start at {offset}",
                    s.name, s.offset
                )));
            }
            offset += s.len();
        }
        if offset != values.len() {
            return Err(Error::Checkpoint(format!(
                "segments cover {offset} values but {} were given",
                values.len()
            )));
        }
        Ok(ParamVector { segments, values })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<S>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(ParamVector {
            segments: self.segments.clone(),
            values,
        })
    }

    pub fn as_tensor(&self) -> Tensor<S> {
        Tensor::vector(self.values.clone())
    }

    /// Names whose layout differs from `other` (missing on either side or wrong shape).
    pub fn layout_mismatches(&self, other: &[Segment]) -> Vec<String> {
        let mut bad = Vec::new();
        for s in &self.segments {
            match other.iter().find(|o| o.name == s.name) {
                Some(o) if o.shape == s.shape && o.offset == s.offset => {}
                Some(o) => bad.push(format!("{} (expected {:?}, found {:?})", s.name, s.shape, o.shape)),
                None => bad.push(format!("{} (missing)", s.name)),
            }
        }
        for o in other {
            if self.segment(&o.name).is_none() {
                bad.push(format!("{} (unexpected)", o.name));
            }
        }
        bad
    }
}

/// A flat parameter node on a tape together with its segment layout.
#[derive(Debug, Clone, Copy)]
pub struct ParamView<'a> {
    pub flat: Var,
    pub segments: &'a [Segment],
}

impl<'a> ParamView<'a> {
    pub fn new(flat: Var, segments: &'a [Segment]) -> Self {
        ParamView { flat, segments }
    }

    /// Tape node for segment `name`, checked against the expected shape.
    pub fn get<S: Scalar>(&self, tape: &mut Tape<S>, name: &str, expect: &[usize]) -> Result<Var> {
        let seg = self
            .segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("missing parameter segment {name:?}")))?;
        if seg.shape != expect {
            return Err(Error::Config(format!(
                "parameter segment {name:?} has shape {:?}, expected {expect:?}",
                seg.shape
            )));
        }
        tape.segment(self.flat, seg.offset, &seg.shape)
    }
}
