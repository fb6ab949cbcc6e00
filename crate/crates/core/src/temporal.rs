//! LSTM cell and sequence layer.
//!
//! Gate equations, per time step:
//!
//! ```text
//! f = σ(W_fh h + W_fx x + b_f)      i = σ(W_ih h + W_ix x + b_i)
//! c̃ = tanh(W_ch h + W_cx x + b_c)   o = σ(W_oh h + W_ox x + b_o)
//! c = f ⊙ c_prev + i ⊙ c̃            h = o ⊙ tanh(c)
//! ```
//!
//! The math is generic over `f32`/`f64`: training runs in 32-bit, the oracle
//! and gradient checks in 64-bit.

use std::fmt::Debug;
use std::ops::AddAssign;

use ndarray::{s, Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix2, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;

use crate::nn::{init, HasParams, Param};
use crate::{Error, Result};

pub trait Real:
    Float + LinalgScalar + ScalarOperand + AddAssign + Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

fn sigmoid<F: Real>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

/// The four gates, in the fixed order forget, input, candidate, output.
pub const GATES: [&str; 4] = ["f", "i", "c", "o"];

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights<F> {
    pub w_fh: Array2<F>,
    pub w_fx: Array2<F>,
    pub b_f: Array1<F>,
    pub w_ih: Array2<F>,
    pub w_ix: Array2<F>,
    pub b_i: Array1<F>,
    pub w_ch: Array2<F>,
    pub w_cx: Array2<F>,
    pub b_c: Array1<F>,
    pub w_oh: Array2<F>,
    pub w_ox: Array2<F>,
    pub b_o: Array1<F>,
}

impl<F: Real> LstmWeights<F> {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let wh = || Array2::zeros((hidden, hidden));
        let wx = || Array2::zeros((hidden, input));
        let b = || Array1::zeros(hidden);
        LstmWeights {
            w_fh: wh(),
            w_fx: wx(),
            b_f: b(),
            w_ih: wh(),
            w_ix: wx(),
            b_i: b(),
            w_ch: wh(),
            w_cx: wx(),
            b_c: b(),
            w_oh: wh(),
            w_ox: wx(),
            b_o: b(),
        }
    }

    /// Uniform draws in `[-scale, scale]` for every array, biases included.
    pub fn random<R: Rng>(hidden: usize, input: usize, scale: f64, rng: &mut R) -> Self {
        let mut w = Self::zeros(hidden, input);
        w.for_each_mut(|_, mut a| a.mapv_inplace(|_| F::from(rng.random_range(-scale..=scale)).expect("cast")));
        w
    }

    /// Glorot-uniform input kernels, orthogonal recurrent kernels, zero
    /// biases except a unit forget bias.
    pub fn initialized<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(hidden, input);
        for (wx, wh) in [
            (&mut w.w_fx, &mut w.w_fh),
            (&mut w.w_ix, &mut w.w_ih),
            (&mut w.w_cx, &mut w.w_ch),
            (&mut w.w_ox, &mut w.w_oh),
        ] {
            let g = init::glorot_uniform(&[hidden, input], input, 4 * hidden, rng);
            wx.assign(&g.mapv(|v| F::from(v).expect("cast")).into_dimensionality::<Ix2>().expect("2-D"));
            wh.assign(&init::orthogonal(hidden, rng).mapv(|v| F::from(v).expect("cast")));
        }
        w.b_f.fill(F::one());
        w
    }

    pub fn hidden(&self) -> usize {
        self.b_f.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_fx.ncols()
    }

    /// Stable names for the twelve arrays.
    pub fn names() -> [&'static str; 12] {
        [
            "W_fh", "W_fx", "b_f", "W_ih", "W_ix", "b_i", "W_ch", "W_cx", "b_c", "W_oh", "W_ox", "b_o",
        ]
    }

    fn gate(&self, g: usize) -> (&Array2<F>, &Array2<F>, &Array1<F>) {
        match g {
            0 => (&self.w_fh, &self.w_fx, &self.b_f),
            1 => (&self.w_ih, &self.w_ix, &self.b_i),
            2 => (&self.w_ch, &self.w_cx, &self.b_c),
            _ => (&self.w_oh, &self.w_ox, &self.b_o),
        }
    }

    fn gate_mut(&mut self, g: usize) -> (&mut Array2<F>, &mut Array2<F>, &mut Array1<F>) {
        match g {
            0 => (&mut self.w_fh, &mut self.w_fx, &mut self.b_f),
            1 => (&mut self.w_ih, &mut self.w_ix, &mut self.b_i),
            2 => (&mut self.w_ch, &mut self.w_cx, &mut self.b_c),
            _ => (&mut self.w_oh, &mut self.w_ox, &mut self.b_o),
        }
    }

    /// Visit every array as a flat dynamic view, in `names()` order.
    pub fn for_each(&self, mut f: impl FnMut(&str, ndarray::ArrayViewD<'_, F>)) {
        let names = Self::names();
        for g in 0..4 {
            let (wh, wx, b) = self.gate(g);
            f(names[3 * g], wh.view().into_dyn());
            f(names[3 * g + 1], wx.view().into_dyn());
            f(names[3 * g + 2], b.view().into_dyn());
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, ndarray::ArrayViewMutD<'_, F>)) {
        let names = Self::names();
        for g in 0..4 {
            let (wh, wx, b) = self.gate_mut(g);
            f(names[3 * g], wh.view_mut().into_dyn());
            f(names[3 * g + 1], wx.view_mut().into_dyn());
            f(names[3 * g + 2], b.view_mut().into_dyn());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden(), self.input_dim());
        for g in 0..4 {
            let (wh, wx, b) = self.gate(g);
            if wh.dim() != (h, h) || wx.dim() != (h, d) || b.len() != h {
                return Err(Error::Shape(format!(
                    "gate {}: expected W_h ({h},{h}), W_x ({h},{d}), b ({h}); got {:?}, {:?}, ({})",
                    GATES[g],
                    wh.dim(),
                    wx.dim(),
                    b.len()
                )));
            }
        }
        let mut finite = true;
        self.for_each(|_, a| finite &= a.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numeric("non-finite LSTM weight".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F> {
    pub h: Array1<F>,
    pub c: Array1<F>,
}

impl<F: Real> LstmState<F> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord<F> {
    pub f: Array1<F>,
    pub i: Array1<F>,
    pub c_tilde: Array1<F>,
    pub o: Array1<F>,
}

/// Activations of one batched step.
#[derive(Debug, Clone)]
struct StepCache<F> {
    x: Array2<F>,
    h_prev: Array2<F>,
    c_prev: Array2<F>,
    gates: [Array2<F>; 4],
    c: Array2<F>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache<F> {
    steps: Vec<StepCache<F>>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads<F> {
    pub weights: LstmWeights<F>,
    pub xs: Array3<F>,
    pub h0: Array2<F>,
    pub c0: Array2<F>,
}

fn step_batch<F: Real>(w: &LstmWeights<F>, x: &Array2<F>, h_prev: &Array2<F>, c_prev: &Array2<F>) -> StepCache<F> {
    let gates: [Array2<F>; 4] = std::array::from_fn(|g| {
        let (wh, wx, b) = w.gate(g);
        let mut z = h_prev.dot(&wh.t()) + x.dot(&wx.t());
        z += b;
        if g == 2 {
            z.mapv_inplace(|v| v.tanh());
        } else {
            z.mapv_inplace(sigmoid);
        }
        z
    });
    let c = &gates[0] * c_prev + &gates[1] * &gates[2];
    StepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates,
        c,
    }
}

impl<F: Real> StepCache<F> {
    fn h(&self) -> Array2<F> {
        &self.gates[3] * &self.c.mapv(|v| v.tanh())
    }
}

/// One application of the cell equations to a single sample.
pub fn cell_step<F: Real>(
    w: &LstmWeights<F>,
    x_t: &Array1<F>,
    prev: &LstmState<F>,
) -> Result<(LstmState<F>, GateRecord<F>)> {
    let (h, d) = (w.hidden(), w.input_dim());
    if x_t.len() != d || prev.h.len() != h || prev.c.len() != h {
        return Err(Error::Shape(format!(
            "cell_step expects x ({d}), h ({h}), c ({h}); got ({}), ({}), ({})",
            x_t.len(),
            prev.h.len(),
            prev.c.len()
        )));
    }
    if !x_t.iter().chain(prev.h.iter()).chain(prev.c.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite LSTM input".into()));
    }
    let row = |a: &Array1<F>| a.clone().insert_axis(Axis(0));
    let step = step_batch(w, &row(x_t), &row(&prev.h), &row(&prev.c));
    let first = |a: &Array2<F>| a.row(0).to_owned();
    let state = LstmState {
        h: first(&step.h()),
        c: first(&step.c),
    };
    let gates = GateRecord {
        f: first(&step.gates[0]),
        i: first(&step.gates[1]),
        c_tilde: first(&step.gates[2]),
        o: first(&step.gates[3]),
    };
    Ok((state, gates))
}

fn check_sequence<F: Real>(w: &LstmWeights<F>, xs: &Array3<F>, init: Option<&LstmState<F>>) -> Result<()> {
    let (_, t, d) = xs.dim();
    if t == 0 {
        return Err(Error::Shape("sequence length must be at least 1".into()));
    }
    if d != w.input_dim() {
        return Err(Error::Shape(format!("LSTM expects {} input features, got {d}", w.input_dim())));
    }
    if let Some(s) = init {
        if s.h.len() != w.hidden() || s.c.len() != w.hidden() {
            return Err(Error::Shape("initial state size does not match hidden units".into()));
        }
    }
    Ok(())
}

/// Final hidden state for each batch row; zero initial state unless given.
pub fn forward<F: Real>(w: &LstmWeights<F>, xs: &Array3<F>, init: Option<&LstmState<F>>) -> Result<Array2<F>> {
    Ok(forward_with_cache(w, xs, init)?.0)
}

pub fn forward_with_cache<F: Real>(
    w: &LstmWeights<F>,
    xs: &Array3<F>,
    init: Option<&LstmState<F>>,
) -> Result<(Array2<F>, LstmCache<F>)> {
    check_sequence(w, xs, init)?;
    let (b, t, _) = xs.dim();
    let hdim = w.hidden();
    let (mut h, mut c) = match init {
        Some(s) => (
            s.h.broadcast((b, hdim)).expect("broadcast").to_owned(),
            s.c.broadcast((b, hdim)).expect("broadcast").to_owned(),
        ),
        None => (Array2::zeros((b, hdim)), Array2::zeros((b, hdim))),
    };
    let mut steps = Vec::with_capacity(t);
    for step in 0..t {
        let x = xs.slice(s![.., step, ..]).to_owned();
        let cache = step_batch(w, &x, &h, &c);
        h = cache.h();
        c = cache.c.clone();
        steps.push(cache);
    }
    Ok((h, LstmCache { steps }))
}

/// Backpropagation through time from an upstream gradient on `h_T`.
pub fn backward<F: Real>(w: &LstmWeights<F>, cache: Option<&LstmCache<F>>, dh_last: &Array2<F>) -> Result<LstmGrads<F>> {
    let cache = cache.ok_or(Error::MissingCache)?;
    let first = cache.steps.first().ok_or(Error::MissingCache)?;
    let (b, hdim) = first.h_prev.dim();
    let d = first.x.ncols();
    if dh_last.dim() != (b, hdim) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match ({b}, {hdim})",
            dh_last.dim()
        )));
    }
    let one = F::one();
    let mut grads = LstmWeights::zeros(hdim, d);
    let mut dxs = Array3::zeros((b, cache.steps.len(), d));
    let mut dh = dh_last.clone();
    let mut dc = Array2::<F>::zeros((b, hdim));
    for (t, step) in cache.steps.iter().enumerate().rev() {
        let [f, i, g, o] = &step.gates;
        let tanh_c = step.c.mapv(|v| v.tanh());
        let d_o = &dh * &tanh_c;
        dc = dc + &dh * o * &tanh_c.mapv(|v| one - v * v);
        let dz = [
            &dc * &step.c_prev * &f.mapv(|v| v * (one - v)),
            &dc * g * &i.mapv(|v| v * (one - v)),
            &dc * i * &g.mapv(|v| one - v * v),
            d_o * &o.mapv(|v| v * (one - v)),
        ];
        let mut dh_prev = Array2::<F>::zeros((b, hdim));
        let mut dx = Array2::<F>::zeros((b, d));
        for (gi, z) in dz.iter().enumerate() {
            let (wh, wx, _) = w.gate(gi);
            dh_prev = dh_prev + z.dot(wh);
            dx = dx + z.dot(wx);
            let (gwh, gwx, gb) = grads.gate_mut(gi);
            *gwh = &*gwh + &z.t().dot(&step.h_prev);
            *gwx = &*gwx + &z.t().dot(&step.x);
            *gb = &*gb + &z.sum_axis(Axis(0));
        }
        dxs.slice_mut(s![.., t, ..]).assign(&dx);
        dc = &dc * f;
        dh = dh_prev;
    }
    Ok(LstmGrads {
        weights: grads,
        xs: dxs,
        h0: dh,
        c0: dc,
    })
}

/// 32-bit LSTM layer owning its weights as named parameters.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub name: String,
    params: Vec<Param>,
    cache: Option<LstmCache<f32>>,
}

impl LstmLayer {
    pub fn new<R: Rng>(name: &str, hidden: usize, input: usize, rng: &mut R) -> Self {
        let w = LstmWeights::<f32>::initialized(hidden, input, rng);
        let mut params = Vec::with_capacity(12);
        w.for_each(|n, a| params.push(Param::weight(format!("{name}/{n}"), a.to_owned())));
        LstmLayer {
            name: name.to_string(),
            params,
            cache: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.params[2].value.len()
    }

    pub fn weights(&self) -> LstmWeights<f32> {
        let p = |k: usize| self.params[k].value.view().into_dimensionality::<Ix2>().expect("2-D").to_owned();
        let b = |k: usize| self.params[k].value.view().into_dimensionality::<Ix1>().expect("1-D").to_owned();
        LstmWeights {
            w_fh: p(0),
            w_fx: p(1),
            b_f: b(2),
            w_ih: p(3),
            w_ix: p(4),
            b_i: b(5),
            w_ch: p(6),
            w_cx: p(7),
            b_c: b(8),
            w_oh: p(9),
            w_ox: p(10),
            b_o: b(11),
        }
    }

    pub fn infer(&self, xs: &Array3<f32>) -> Result<Array2<f32>> {
        forward(&self.weights(), xs, None)
    }

    pub fn forward(&mut self, xs: &Array3<f32>) -> Result<Array2<f32>> {
        let (h, cache) = forward_with_cache(&self.weights(), xs, None)?;
        self.cache = Some(cache);
        Ok(h)
    }

    /// Accumulates weight gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, dh: &Array2<f32>) -> Result<Array3<f32>> {
        let grads = backward(&self.weights(), self.cache.as_ref(), dh)?;
        let mut k = 0;
        let params = &mut self.params;
        grads.weights.for_each(|_, g| {
            let p = &mut params[k];
            if p.trainable {
                p.grad += &g;
            }
            k += 1;
        });
        Ok(grads.xs)
    }
}

impl HasParams for LstmLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.params.iter().for_each(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.params.iter_mut().for_each(f);
    }
}

/// Convert every array between precisions.
pub fn cast_weights<A: Real, B: Real>(w: &LstmWeights<A>) -> LstmWeights<B> {
    let mut out = LstmWeights::<B>::zeros(w.hidden(), w.input_dim());
    let mut src: Vec<ArrayD<A>> = Vec::new();
    w.for_each(|_, a| src.push(a.to_owned()));
    let mut k = 0;
    out.for_each_mut(|_, mut a| {
        a.assign(&src[k].mapv(|v| B::from(v).expect("cast")));
        k += 1;
    });
    out
}
