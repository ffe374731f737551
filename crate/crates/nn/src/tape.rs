//! Reverse-mode tape.
//!
//! Every op appends one node holding its output value. Node indices are the
//! execution order, so the reverse of the index order is always a valid
//! backward order; [`Tape::backward_in_order`] accepts any other valid one.

use crate::kernels::{self, LayerNormCache};
use crate::{invalid, Element, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: LayerNormCache<T> },
    DepthToSpace { x: Var, block: usize },
    SpaceToDepth { x: Var, block: usize },
    Concat(Var, Var),
    Slice { x: Var, start: usize },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![a, b],
            Op::Sigmoid(x) | Op::Tanh(x) => vec![x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::DepthToSpace { x, .. } | Op::SpaceToDepth { x, .. } | Op::Slice { x, .. } => vec![x],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let y = kernels::conv2d(self.value(x), self.value(w), self.value(b), stride)?;
        Ok(self.push(y, Op::Conv2d { x, w, b, stride }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return invalid(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p * q).collect();
        let y = Tensor::from_vec(va.shape(), data)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(kernels::sigmoid_scalar);
        self.push(y, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        self.push(y, Op::Tanh(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, cache) = kernels::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, cache }))
    }

    pub fn depth_to_space(&mut self, x: Var, block: usize) -> Result<Var> {
        let y = kernels::depth_to_space(self.value(x), block)?;
        Ok(self.push(y, Op::DepthToSpace { x, block }))
    }

    pub fn space_to_depth(&mut self, x: Var, block: usize) -> Result<Var> {
        let y = kernels::space_to_depth(self.value(x), block)?;
        Ok(self.push(y, Op::SpaceToDepth { x, block }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Concat(a, b)))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = kernels::slice_channels(self.value(x), start, len)?;
        Ok(self.push(y, Op::Slice { x, start }))
    }

    /// Backpropagates `seed` (the gradient of some scalar with respect to
    /// `output`) through the tape in reverse execution order.
    pub fn backward(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        let order: Vec<Var> = (0..=output.0).rev().map(Var).collect();
        self.backward_in_order(output, seed, &order)
    }

    /// A reverse topological order of the nodes reachable from `output`,
    /// built by depth-first search rather than from execution order.
    pub fn reverse_topological_order(&self, output: Var) -> Vec<Var> {
        let mut visited = vec![false; self.nodes.len()];
        let mut post = Vec::new();
        // (node, next parent to visit)
        let mut stack = vec![(output, 0usize)];
        visited[output.0] = true;
        while let Some((v, i)) = stack.pop() {
            let parents = self.nodes[v.0].op.parents();
            if i < parents.len() {
                stack.push((v, i + 1));
                let p = parents[parents.len() - 1 - i];
                if !visited[p.0] {
                    visited[p.0] = true;
                    stack.push((p, 0));
                }
            } else {
                post.push(v);
            }
        }
        post.reverse();
        post
    }

    /// Backward pass visiting nodes in the given order, which must list every
    /// consumer of a node before the node itself.
    pub fn backward_in_order(&self, output: Var, seed: Tensor<T>, order: &[Var]) -> Result<Gradients<T>> {
        self.run_backward(vec![(output, seed)], order)
    }

    /// Backpropagates several seeds at once, e.g. one loss gradient per
    /// unrolled timestep. Equivalent to summing separate backward passes.
    pub fn backward_seeds(&self, seeds: Vec<(Var, Tensor<T>)>) -> Result<Gradients<T>> {
        let Some(last) = seeds.iter().map(|(v, _)| v.0).max() else {
            return invalid("backward needs at least one seed");
        };
        let order: Vec<Var> = (0..=last).rev().map(Var).collect();
        self.run_backward(seeds, &order)
    }

    fn run_backward(&self, seeds: Vec<(Var, Tensor<T>)>, order: &[Var]) -> Result<Gradients<T>> {
        for (output, seed) in &seeds {
            if output.0 >= self.nodes.len() || seed.shape() != self.value(*output).shape() {
                return invalid(format!("seed shape {:?} does not match its output node", seed.shape()));
            }
        }
        let mut position = vec![usize::MAX; self.nodes.len()];
        for (i, v) in order.iter().enumerate() {
            if v.0 >= self.nodes.len() || position[v.0] != usize::MAX {
                return invalid(format!("backward order repeats or exceeds node {}", v.0));
            }
            position[v.0] = i;
        }
        for v in order {
            for p in self.nodes[v.0].op.parents() {
                if position[p.0] != usize::MAX && position[p.0] < position[v.0] {
                    return invalid(format!("node {} visited before its consumer {}", p.0, v.0));
                }
            }
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (output, seed) in seeds {
            if position[output.0] == usize::MAX {
                return invalid(format!("backward order omits seeded node {}", output.0));
            }
            match &mut grads[output.0] {
                Some(acc) => acc.add_assign(&seed),
                slot => *slot = Some(seed),
            }
        }
        for &v in order {
            let Some(g) = grads[v.0].take() else { continue };
            for (parent, contribution) in self.vjp(v, &g)? {
                if position[parent.0] == usize::MAX {
                    return invalid(format!("backward order omits node {}", parent.0));
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
            grads[v.0] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, v: Var, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[v.0];
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            &Op::Conv2d { x, w, b, stride } => {
                let (dx, dw, db) = kernels::conv2d_backward(self.value(x), self.value(w), g, stride)?;
                vec![(x, dx), (w, dw), (b, db)]
            }
            &Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let da = zip_with(g, vb, |gi, bi| gi * bi);
                let db = zip_with(g, va, |gi, ai| gi * ai);
                vec![(a, da), (b, db)]
            }
            &Op::Sigmoid(x) => vec![(x, zip_with(g, out, |gi, s| gi * s * (T::one() - s)))],
            &Op::Tanh(x) => vec![(x, zip_with(g, out, |gi, t| gi * (T::one() - t * t)))],
            Op::LayerNorm { x, gamma, beta, cache } => {
                let (dx, dgamma, dbeta) =
                    kernels::layer_norm_backward(self.value(*x), self.value(*gamma), cache, g)?;
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            &Op::DepthToSpace { x, block } => vec![(x, kernels::space_to_depth(g, block)?)],
            &Op::SpaceToDepth { x, block } => vec![(x, kernels::depth_to_space(g, block)?)],
            &Op::Concat(a, b) => {
                let ca = self.value(a).shape()[3];
                let cb = self.value(b).shape()[3];
                vec![(a, kernels::slice_channels(g, 0, ca)?), (b, kernels::slice_channels(g, ca, cb)?)]
            }
            &Op::Slice { x, start } => {
                let [n, h, w, c] = self.value(x).dims4()?;
                let len = g.shape()[3];
                let mut dx = Tensor::zeros(&[n, h, w, c]);
                for (dst, src) in dx.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(len)) {
                    dst[start..start + len].copy_from_slice(src);
                }
                vec![(x, dx)]
            }
        })
    }
}

fn zip_with<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}
