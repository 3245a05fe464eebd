use rand::Rng;

use crate::graph::GraphParams;
use crate::intra::IntraParams;
use crate::numerics::{DenseMatrix, ParamTensor, Parameterized, INIT_STD};

/// All trainable state: the shared item table plus both encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub item_table: ParamTensor,
    pub intra: IntraParams,
    pub graph: GraphParams,
}

impl ModelState {
    pub fn init<R: Rng + ?Sized>(num_items: usize, d: usize, gcn_layers: usize, rng: &mut R) -> Self {
        let item_table = ParamTensor::gaussian("item_table", num_items, d, INIT_STD, rng);
        let intra = IntraParams::init(d, rng);
        let graph = GraphParams::init(d, gcn_layers, rng);
        Self {
            item_table,
            intra,
            graph,
        }
    }

    pub fn num_items(&self) -> usize {
        self.item_table.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.item_table.value.cols()
    }

    pub fn num_layers(&self) -> usize {
        self.graph.layers.len()
    }

    pub fn table(&self) -> &DenseMatrix {
        &self.item_table.value
    }
}

impl Parameterized for ModelState {
    /// Checkpoint order: `item_table`, the intra tensors, `gcn_w0..`, `w_g`.
    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = vec![&self.item_table];
        v.extend(self.intra.tensors());
        v.extend(self.graph.tensors());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = vec![&mut self.item_table];
        v.extend(self.intra.tensors_mut());
        v.extend(self.graph.tensors_mut());
        v
    }
}
