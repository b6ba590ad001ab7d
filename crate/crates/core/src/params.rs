use serde::{Deserialize, Serialize};

/// What a block of parameters means to the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Dictionary coefficients: the only entries that are L1-penalized and
    /// pruned.
    Coefficients,
    LambdaSeed,
    DSeed,
    Damping,
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Every trainable quantity of a model, stored flat with a named block layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    blocks: Vec<Block>,
    values: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    blocks: Vec<Block>,
    len: usize,
}

impl LayoutBuilder {
    pub fn block(mut self, name: &str, kind: BlockKind, rows: usize, cols: usize) -> Self {
        self.blocks.push(Block { name: name.to_string(), kind, offset: self.len, rows, cols });
        self.len += rows * cols;
        self
    }

    pub fn zeros(self) -> ParameterStore {
        ParameterStore { values: vec![0.0; self.len], blocks: self.blocks }
    }
}

impl ParameterStore {
    pub fn layout() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.block(name).map(|b| &self.values[b.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.block(name)?.range();
        Some(&mut self.values[r])
    }

    /// Same layout, compatible for swapping values.
    pub fn same_layout(&self, other: &ParameterStore) -> bool {
        self.blocks == other.blocks
    }

    /// Replaces all values; lengths must match.
    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.values.len(), "parameter length mismatch");
        self.values.copy_from_slice(values);
    }

    /// Flat indices of every dictionary coefficient.
    pub fn coefficient_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::Coefficients)
            .flat_map(|b| b.range())
    }

    /// `Σ |ξ|` over dictionary coefficients.
    pub fn coefficient_l1(&self) -> f64 {
        self.coefficient_indices().map(|i| self.values[i].abs()).sum()
    }

    /// Number of nonzero dictionary coefficients.
    pub fn nnz(&self) -> usize {
        self.coefficient_indices().filter(|&i| self.values[i] != 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_and_penalized_indices() {
        let mut s = ParameterStore::layout()
            .block("xi", BlockKind::Coefficients, 3, 2)
            .block("n", BlockKind::Damping, 1, 1)
            .block("xi_b", BlockKind::Coefficients, 2, 1)
            .zeros();
        assert_eq!(s.len(), 9);
        assert_eq!(s.block("xi_b").unwrap().offset, 7);
        let idx: Vec<usize> = s.coefficient_indices().collect();
        assert_eq!(idx, [0, 1, 2, 3, 4, 5, 7, 8]);
        s.get_mut("n").unwrap()[0] = -4.0;
        s.get_mut("xi").unwrap()[1] = 0.5;
        s.get_mut("xi_b").unwrap()[1] = -1.5;
        assert_eq!(s.coefficient_l1(), 2.0);
        assert_eq!(s.nnz(), 2);
        assert!(s.get("missing").is_none());
    }
}
