use std::fmt::{self, Write as _};

use serde::Serialize;

use super::Network;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerRow {
    pub index: usize,
    pub name: String,
    pub kind: String,
    pub description: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub trainable: usize,
}

/// Per-layer output shapes and parameter counts. `total` counts every
/// stored tensor, including batch-norm running statistics; `trainable`
/// leaves those out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ArchReport {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerRow>,
    pub total: usize,
    pub trainable: usize,
}

impl ArchReport {
    pub fn new<T: Scalar>(net: &Network<T>) -> Self {
        let layers: Vec<LayerRow> = net
            .nodes()
            .iter()
            .enumerate()
            .map(|(index, n)| LayerRow {
                index,
                name: n.name.clone(),
                kind: n.layer.kind().name().to_string(),
                description: n.layer.describe(),
                output_shape: n.output_shape.clone(),
                params: n.layer.param_count(),
                trainable: n.layer.trainable_count(),
            })
            .collect();
        Self {
            name: net.name().to_string(),
            input_shape: net.input_shape().to_vec(),
            total: layers.iter().map(|r| r.params).sum(),
            trainable: layers.iter().map(|r| r.trainable).sum(),
            layers,
        }
    }

    pub fn non_trainable(&self) -> usize {
        self.total - self.trainable
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl fmt::Display for ArchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = ["#", "layer", "type", "output", "params"];
        let rows: Vec<[String; 5]> = self
            .layers
            .iter()
            .map(|r| {
                [
                    r.index.to_string(),
                    r.name.clone(),
                    r.description.clone(),
                    shape_str(&r.output_shape),
                    r.params.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut line = String::new();
        let mut emit = |cells: [&str; 5], out: &mut fmt::Formatter<'_>| -> fmt::Result {
            line.clear();
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if i > 0 {
                    line.push_str("  ");
                }
                // numbers right-aligned, text left-aligned
                if i == 0 || i == 4 {
                    let _ = write!(line, "{cell:>w$}");
                } else {
                    let _ = write!(line, "{cell:<w$}");
                }
            }
            writeln!(out, "{}", line.trim_end())
        };
        writeln!(f, "{} (input {})", self.name, shape_str(&self.input_shape))?;
        emit(header, f)?;
        for row in &rows {
            emit([&row[0], &row[1], &row[2], &row[3], &row[4]], f)?;
        }
        writeln!(f, "total params: {}", self.total)?;
        writeln!(f, "trainable params: {}", self.trainable)?;
        write!(f, "non-trainable params: {}", self.non_trainable())
    }
}
