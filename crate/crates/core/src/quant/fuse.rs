use std::collections::HashMap;

use super::{rebuild, QuantError};
use crate::bundle::{ModelBundle, Variant, Weight};
use crate::engine::kernels::broadcast_pairs;
use crate::graph::{Node, OpKind};
use crate::tensor::{DType, Tensor};

struct Work {
    nodes: Vec<Node>,
    outputs: Vec<String>,
    weights: Vec<Weight>,
}

impl Work {
    fn consumers(&self) -> HashMap<String, Vec<usize>> {
        let mut map: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for inp in &n.inputs {
                map.entry(inp.clone()).or_default().push(i);
            }
        }
        map
    }

    fn find(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    fn is_output(&self, id: &str) -> bool {
        self.outputs.iter().any(|o| o == id)
    }

    fn const_f32(&self, id: &str) -> Option<&Tensor> {
        let n = &self.nodes[self.find(id)?];
        if n.op != OpKind::Const {
            return None;
        }
        self.weights[n.weight?].as_tensor().filter(|t| t.dtype() == DType::Fp32)
    }

    fn set_const(&mut self, id: &str, t: Tensor) {
        let i = self.find(id).expect("const exists");
        self.weights.push(Weight::Tensor(t));
        self.nodes[i].weight = Some(self.weights.len() - 1);
    }

    /// Removes node `old`, pointing its consumers and outputs at `new`.
    fn bypass(&mut self, old: &str, new: &str) {
        for n in &mut self.nodes {
            for inp in &mut n.inputs {
                if inp == old {
                    *inp = new.to_string();
                }
            }
        }
        for o in &mut self.outputs {
            if o == old {
                *o = new.to_string();
            }
        }
        self.nodes.retain(|n| n.id != old);
    }

    /// `(other operand, const operand)` of a binary op with exactly one Const side.
    fn split_const<'a>(&self, n: &'a Node) -> Option<(&'a str, &'a str)> {
        let (a, b) = (n.inputs[0].as_str(), n.inputs[1].as_str());
        match (self.const_f32(a).is_some(), self.const_f32(b).is_some()) {
            (false, true) => Some((a, b)),
            (true, false) => Some((b, a)),
            _ => None,
        }
    }

    fn sole_consumer(&self, cons: &HashMap<String, Vec<usize>>, id: &str, of: usize) -> bool {
        cons.get(id).is_some_and(|c| c == &[of]) && !self.is_output(id)
    }

    fn drop_identity(&mut self) -> bool {
        let Some(n) = self.nodes.iter().find(|n| n.op == OpKind::Identity) else {
            return false;
        };
        let (old, new) = (n.id.clone(), n.inputs[0].clone());
        self.bypass(&old, &new);
        true
    }

    /// Conv2D/DepthwiseConv2D/MatMul followed by Mul(const) scales the
    /// kernel's output channels instead.
    fn fold_mul_into_kernel(&mut self) -> bool {
        let cons = self.consumers();
        for (mi, m) in self.nodes.iter().enumerate() {
            if m.op != OpKind::Mul {
                continue;
            }
            let Some((x, c)) = self.split_const(m) else { continue };
            let Some(xi) = self.find(x) else { continue };
            let xn = &self.nodes[xi];
            if !matches!(xn.op, OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::MatMul)
                || !self.sole_consumer(&cons, x, mi)
            {
                continue;
            }
            let k_id = xn.inputs[1].clone();
            let (Some(kernel), Some(factor)) = (self.const_f32(&k_id), self.const_f32(c)) else {
                continue;
            };
            if !self.sole_consumer(&cons, &k_id, xi) {
                continue;
            }
            let ks = kernel.shape();
            let co = match xn.op {
                OpKind::DepthwiseConv2D => ks[2] * ks[3],
                _ => ks[ks.len() - 1],
            };
            let f = factor.as_f32().expect("fp32 const");
            if !(f.len() == 1 || (factor.rank() == 1 && f.len() == co)) {
                continue;
            }
            let data = kernel
                .as_f32()
                .expect("fp32 const")
                .iter()
                .enumerate()
                .map(|(i, &w)| w * f[if f.len() == 1 { 0 } else { i % co }])
                .collect();
            let folded = Tensor::from_f32(ks.to_vec(), data).expect("same shape");
            let (m_id, x_id) = (m.id.clone(), x.to_string());
            self.set_const(&k_id, folded);
            self.bypass(&m_id, &x_id);
            return true;
        }
        false
    }

    /// `(x ∘ a) ∘ b` with constants `a`, `b` and the same op becomes `x ∘ (a ∘ b)`.
    fn merge_const_chain(&mut self) -> bool {
        let cons = self.consumers();
        for (i2, n2) in self.nodes.iter().enumerate() {
            if !matches!(n2.op, OpKind::AddV2 | OpKind::Mul) {
                continue;
            }
            let Some((first, c2)) = self.split_const(n2) else { continue };
            let Some(i1) = self.find(first) else { continue };
            let n1 = &self.nodes[i1];
            if n1.op != n2.op || !self.sole_consumer(&cons, first, i2) {
                continue;
            }
            let Some((_, c1)) = self.split_const(n1) else { continue };
            if !self.sole_consumer(&cons, c1, i1) {
                continue;
            }
            let (t1, t2) = (self.const_f32(c1).expect("const"), self.const_f32(c2).expect("const"));
            if t1.rank() > 1 || t2.rank() > 1 {
                continue;
            }
            let Some((shape, pairs)) = broadcast_pairs(t1.shape(), t2.shape()) else { continue };
            let (a, b) = (t1.as_f32().expect("fp32"), t2.as_f32().expect("fp32"));
            let add = n2.op == OpKind::AddV2;
            let data = pairs
                .iter()
                .map(|&(i, j)| if add { a[i] + b[j] } else { a[i] * b[j] })
                .collect();
            let merged = Tensor::from_f32(shape, data).expect("broadcast shape");
            let (c1, n2_id, n1_id) = (c1.to_string(), n2.id.clone(), n1.id.clone());
            self.set_const(&c1, merged);
            self.bypass(&n2_id, &n1_id);
            return true;
        }
        false
    }
}

/// Constant folding to a fixpoint: drops Identity nodes, folds Mul-by-const
/// into the preceding kernel, and merges chains of AddV2/Mul by constants.
/// The result is the `fp32opt` variant. Idempotent.
pub fn fuse_constants(b: &ModelBundle) -> Result<ModelBundle, QuantError> {
    if !matches!(b.variant(), Variant::Fp32 | Variant::Fp32Opt) {
        return Err(QuantError::NotFp32(b.variant()));
    }
    let (mut metadata, graph, weights) = b.clone().into_parts();
    let mut w = Work {
        nodes: graph.nodes,
        outputs: graph.outputs,
        weights,
    };
    while w.drop_identity() || w.fold_mul_into_kernel() || w.merge_const_chain() {}
    metadata.variant = Variant::Fp32Opt;
    let graph = crate::graph::Graph {
        inputs: graph.inputs,
        nodes: w.nodes,
        outputs: w.outputs,
        output_dtype: graph.output_dtype,
    };
    rebuild(metadata, graph, w.weights)
}
