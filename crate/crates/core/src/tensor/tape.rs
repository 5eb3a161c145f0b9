use super::ops;
use super::{ParamTensor, Real, Tensor};
use crate::error::{Result, StanError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var },
    Sigmoid(Var),
    Relu(Var),
    AvgPoolSpatial(Var),
    AvgPoolTemporal(Var),
    TileSpatial(Var),
    OuterProductSt { space: Var, time: Var },
    ElementwiseMul { x: Var, a: Var },
    ConcatChannels { x: Var, y: Var },
    Add(Var, Var),
    Reshape(Var),
    Bce { p: Var, target: Vec<f64> },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
}

/// Single-threaded reverse-mode tape over the fixed op set in [`ops`].
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(Var, String)>,
    clamped: usize,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            clamped: 0,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of probabilities clamped by BCE ops on this tape.
    pub fn clamp_count(&self) -> usize {
        self.clamped
    }

    /// A constant input; gradients are still computed for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Record a parameter; its gradient can later be routed back by name.
    pub fn param(&mut self, p: &ParamTensor<T>) -> Var {
        let v = self.push(p.value.clone(), Op::Leaf);
        self.params.push((v, p.name.clone()));
        v
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::linear_map(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Conv2d { x, w, b }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn avg_pool_spatial(&mut self, x: Var) -> Result<Var> {
        let y = ops::avg_pool_spatial(self.value(x))?;
        Ok(self.push(y, Op::AvgPoolSpatial(x)))
    }

    pub fn avg_pool_temporal(&mut self, x: Var) -> Result<Var> {
        let y = ops::avg_pool_temporal(self.value(x))?;
        Ok(self.push(y, Op::AvgPoolTemporal(x)))
    }

    pub fn tile_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::tile_spatial(self.value(x), h, w)?;
        Ok(self.push(y, Op::TileSpatial(x)))
    }

    pub fn outer_product_st(&mut self, space: Var, time: Var) -> Result<Var> {
        let y = ops::outer_product_st(self.value(space), self.value(time))?;
        Ok(self.push(y, Op::OuterProductSt { space, time }))
    }

    pub fn elementwise_mul(&mut self, x: Var, a: Var) -> Result<Var> {
        let y = ops::elementwise_mul(self.value(x), self.value(a))?;
        Ok(self.push(y, Op::ElementwiseMul { x, a }))
    }

    pub fn concat_channels(&mut self, x: Var, y: Var) -> Result<Var> {
        let z = ops::concat_channels(self.value(x), self.value(y))?;
        Ok(self.push(z, Op::ConcatChannels { x, y }))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        let z = ops::add(self.value(x), self.value(y))?;
        Ok(self.push(z, Op::Add(x, y)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// Mean multi-label BCE of probabilities `p` against `target`; shape `[1]`.
    pub fn bce(&mut self, p: Var, target: &[f64]) -> Result<Var> {
        let (loss, clamped) = ops::bce(self.value(p), target)?;
        self.clamped += clamped;
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::Bce {
                p,
                target: target.to_vec(),
            },
        ))
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(StanError::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::ones(out.shape()));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, d: Tensor<T>| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&d).expect("gradient shapes agree"),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                &Op::Linear { x, w, b } => {
                    let (dx, dw, db) = ops::linear_map_backward(self.value(x), self.value(w), &g);
                    send(x, dx);
                    send(w, dw);
                    send(b, db);
                }
                &Op::Conv2d { x, w, b } => {
                    let (dx, dw, db) = ops::conv2d_backward(self.value(x), self.value(w), &g);
                    send(x, dx);
                    send(w, dw);
                    send(b, db);
                }
                &Op::Sigmoid(x) => send(x, ops::sigmoid_backward(&node.value, &g)),
                &Op::Relu(x) => send(x, ops::relu_backward(self.value(x), &g)),
                &Op::AvgPoolSpatial(x) => {
                    send(x, ops::avg_pool_spatial_backward(self.value(x).shape(), &g))
                }
                &Op::AvgPoolTemporal(x) => {
                    send(x, ops::avg_pool_temporal_backward(self.value(x).shape(), &g))
                }
                &Op::TileSpatial(x) => send(x, ops::tile_spatial_backward(&g)),
                &Op::OuterProductSt { space, time } => {
                    let (ds, dt) =
                        ops::outer_product_st_backward(self.value(space), self.value(time), &g);
                    send(space, ds);
                    send(time, dt);
                }
                &Op::ElementwiseMul { x, a } => {
                    let (dx, da) = ops::elementwise_mul_backward(self.value(x), self.value(a), &g);
                    send(x, dx);
                    send(a, da);
                }
                &Op::ConcatChannels { x, y } => {
                    let c1 = self.value(x).channels();
                    let c = g.channels();
                    send(x, ops::slice_channels(&g, 0, c1).expect("in range"));
                    send(y, ops::slice_channels(&g, c1, c).expect("in range"));
                }
                &Op::Add(x, y) => {
                    send(x, g.clone());
                    send(y, g.clone());
                }
                &Op::Reshape(x) => {
                    let shape = self.value(x).shape().to_vec();
                    send(x, g.reshape(&shape).expect("same numel"));
                }
                Op::Bce { p, target } => {
                    send(*p, ops::bce_backward(self.value(*p), target, g.data()[0]));
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(Var, String)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the output with respect to `v`, if `v` influenced it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a recorded parameter, by name. A parameter recorded
    /// more than once gets the sum over its records.
    pub fn of_param(&self, name: &str) -> Option<Tensor<T>> {
        let mut total: Option<Tensor<T>> = None;
        for g in self.params.iter().filter(|(_, n)| n == name).filter_map(|(v, _)| self.wrt(*v)) {
            match &mut total {
                Some(t) => t.add_assign(g).expect("records of one parameter share a shape"),
                None => total = Some(g.clone()),
            }
        }
        total
    }

    /// `p.grad += scale * dL/dp` for every parameter recorded on the tape.
    /// Parameters that did not influence the output are left alone.
    pub fn accumulate_into<'a, I>(&self, params: I, scale: T) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut ParamTensor<T>>,
    {
        for p in params {
            if let Some(g) = self.of_param(&p.name) {
                p.accumulate(&g, scale)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::ones(&[3]));
        assert!(matches!(tape.backward(x), Err(StanError::Contract(_))));
    }

    #[test]
    fn tile_gradient_is_grid_size() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let tiled = tape.tile_spatial(x, 2, 3).unwrap();
        let ts = tape.avg_pool_temporal(tiled).unwrap();
        let flat = tape.reshape(ts, &[2 * 3 * 3]).unwrap();
        // sum via a linear map with all-ones weights
        let w = tape.input(Tensor::ones(&[18, 1]));
        let b = tape.input(Tensor::zeros(&[1]));
        let s = tape.linear(flat, w, b).unwrap();
        let g = tape.backward(s).unwrap();
        // d(sum over tiled, then /T)/dx = h*w/T
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_f64(&[1], &[2.0]).unwrap());
        let y = tape.add(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn repeated_param_records_sum() {
        let p = ParamTensor::new("w", Tensor::<f64>::from_f64(&[1], &[3.0]).unwrap());
        let mut tape = Tape::new();
        let a = tape.param(&p);
        let b = tape.param(&p);
        let y = tape.add(a, b).unwrap();
        let y = tape.add(y, b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.of_param("w").unwrap().data(), &[3.0]);
        assert!(g.of_param("v").is_none());
    }
}
