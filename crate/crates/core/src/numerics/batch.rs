use crate::error::{invalid_input, Result};

/// A row-major `rows × classes` matrix of per-sample logits, or of gradients
/// with respect to them.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    data: Vec<f64>,
    classes: usize,
}

impl LogitBatch {
    pub fn new(data: Vec<f64>, classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(invalid_input("logit batch needs at least one class"));
        }
        if data.len() % classes != 0 {
            return Err(invalid_input(format!(
                "{} values do not form rows of {classes} classes",
                data.len()
            )));
        }
        Ok(Self { data, classes })
    }

    pub fn zeros(rows: usize, classes: usize) -> Self {
        Self {
            data: vec![0.0; rows * classes],
            classes,
        }
    }

    /// Stacks rows given as slices.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let classes = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| invalid_input("no rows"))?;
        let mut data = Vec::with_capacity(rows.len() * classes);
        for r in rows {
            if r.as_ref().len() != classes {
                return Err(invalid_input("rows differ in length"));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(data, classes)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &LogitBatch, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn concat(&self, other: &LogitBatch) -> Result<LogitBatch> {
        if self.classes != other.classes {
            return Err(invalid_input("class counts differ"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            data,
            classes: self.classes,
        })
    }

    /// Splits into the first `rows` rows and the rest.
    pub fn split_at_row(&self, rows: usize) -> (LogitBatch, LogitBatch) {
        let (a, b) = self.data.split_at(rows * self.classes);
        (
            Self {
                data: a.to_vec(),
                classes: self.classes,
            },
            Self {
                data: b.to_vec(),
                classes: self.classes,
            },
        )
    }
}
