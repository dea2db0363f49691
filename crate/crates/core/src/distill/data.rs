use std::path::Path;

use crate::tensor::{read_blob, Tensor};

use super::DistillError;

/// Paired teacher/student inputs with optional hard labels. Sample axis first.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub teacher_inputs: Tensor,
    pub student_inputs: Tensor,
    pub labels: Option<Tensor>,
}

impl Dataset {
    pub fn new(teacher_inputs: Tensor, student_inputs: Tensor, labels: Option<Tensor>) -> Result<Self, DistillError> {
        let n = teacher_inputs.rows();
        if student_inputs.rows() != n {
            return Err(DistillError::Data(format!(
                "teacher has {n} samples but student has {}",
                student_inputs.rows()
            )));
        }
        if let Some(l) = &labels {
            if l.rows() != n {
                return Err(DistillError::Data(format!("{n} samples but {} labels", l.rows())));
            }
        }
        Ok(Self { teacher_inputs, student_inputs, labels })
    }

    /// Same inputs for teacher and student.
    pub fn shared(inputs: Tensor) -> Self {
        Self { student_inputs: inputs.clone(), teacher_inputs: inputs, labels: None }
    }

    pub fn load(teacher: &Path, student: Option<&Path>, labels: Option<&Path>) -> Result<Self, DistillError> {
        let read = |p: &Path| read_blob(p).map_err(|e| DistillError::Data(format!("{}: {e}", p.display())));
        let t = read(teacher)?;
        let s = match student {
            Some(p) if p != teacher => read(p)?,
            _ => t.clone(),
        };
        let l = labels.map(read).transpose()?;
        Self::new(t, s, l)
    }

    pub fn len(&self) -> usize {
        self.teacher_inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training indices and validation indices; validation is the last 10%.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.len();
        let mut n_val = n / 10;
        if n_val == 0 && n >= 2 {
            n_val = 1;
        }
        ((0..n - n_val).collect(), (n - n_val..n).collect())
    }
}
