//! Single LSTM layer over time-major batches.
//!
//! Gate layout inside the `4 * units` axis is `[input, forget, candidate, output]`.
//! Masked timesteps emit a zero output and carry `(h, c)` through unchanged, so
//! padding can never leak into the recurrent state.

use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{check_shape, NnError, Result};
use crate::init::{glorot_uniform, orthogonal};
use crate::param::{HasParams, Param};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl LstmState {
    pub fn zeros(batch: usize, units: usize) -> Self {
        Self {
            h: Array2::zeros((batch, units)),
            c: Array2::zeros((batch, units)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    /// `(time, batch, units)`; zero at masked steps.
    pub hidden: Array3<f64>,
    pub state: LstmState,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub input: Array3<f64>,
    pub initial_state: LstmState,
}

#[derive(Debug, Clone)]
struct StepCache {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    x: Array3<f64>,
    mask: Array2<bool>,
    steps: Vec<StepCache>,
}

#[derive(Debug, Clone)]
pub struct Lstm {
    pub kernel: Param,
    pub recurrent: Param,
    pub bias: Param,
    units: usize,
    cache: Option<LstmCache>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    /// Glorot-uniform input kernel, orthogonal recurrent kernel, forget bias 1.
    pub fn new<R: Rng>(rng: &mut R, input: usize, units: usize) -> Self {
        let kernel = glorot_uniform(rng, input, 4 * units);
        let recurrent = orthogonal(rng, units, 4 * units);
        let mut bias = Array2::zeros((1, 4 * units));
        bias.slice_mut(s![0, units..2 * units]).fill(1.0);
        Self::from_weights(kernel, recurrent, bias).expect("consistent shapes")
    }

    pub fn from_weights(kernel: Array2<f64>, recurrent: Array2<f64>, bias: Array2<f64>) -> Result<Self> {
        let units = recurrent.nrows();
        check_shape("lstm recurrent kernel", &[units, 4 * units], recurrent.shape())?;
        check_shape("lstm kernel", &[kernel.nrows(), 4 * units], kernel.shape())?;
        check_shape("lstm bias", &[1, 4 * units], bias.shape())?;
        Ok(Self {
            kernel: Param::new("lstm.kernel", kernel),
            recurrent: Param::new("lstm.recurrent", recurrent),
            bias: Param::new("lstm.bias", bias),
            units,
            cache: None,
        })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn input_width(&self) -> usize {
        self.kernel.value.nrows()
    }

    /// Runs the layer over `x` of shape `(time, batch, input)` with a
    /// `(time, batch)` validity mask.
    pub fn forward(
        &mut self,
        x: &Array3<f64>,
        mask: &Array2<bool>,
        initial: Option<&LstmState>,
    ) -> Result<LstmOutput> {
        let (steps, batch, width) = x.dim();
        check_shape("lstm input", &[steps, batch, self.input_width()], &[steps, batch, width])?;
        check_shape("lstm mask", &[steps, batch], mask.shape())?;
        let h_units = self.units;
        let mut state = match initial {
            Some(st) => {
                check_shape("lstm initial state", &[batch, h_units], st.h.shape())?;
                check_shape("lstm initial state", &[batch, h_units], st.c.shape())?;
                st.clone()
            }
            None => LstmState::zeros(batch, h_units),
        };
        let mut hidden = Array3::zeros((steps, batch, h_units));
        let mut cache_steps = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = x.index_axis(Axis(0), t);
            let mut gates = xt.dot(&self.kernel.value) + state.h.dot(&self.recurrent.value);
            gates += &self.bias.value.row(0);
            gates.slice_mut(s![.., 0..2 * h_units]).mapv_inplace(sigmoid);
            gates.slice_mut(s![.., 2 * h_units..3 * h_units]).mapv_inplace(f64::tanh);
            gates.slice_mut(s![.., 3 * h_units..]).mapv_inplace(sigmoid);

            let i = gates.slice(s![.., 0..h_units]);
            let f = gates.slice(s![.., h_units..2 * h_units]);
            let g = gates.slice(s![.., 2 * h_units..3 * h_units]);
            let o = gates.slice(s![.., 3 * h_units..]);
            let c_new = &f * &state.c + &i * &g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;

            let step_mask = mask.row(t);
            let mut next = LstmState { h: h_new, c: c_new };
            for b in 0..batch {
                if step_mask[b] {
                    hidden.slice_mut(s![t, b, ..]).assign(&next.h.row(b));
                } else {
                    next.h.row_mut(b).assign(&state.h.row(b));
                    next.c.row_mut(b).assign(&state.c.row(b));
                }
            }
            let prev = std::mem::replace(&mut state, next);
            cache_steps.push(StepCache {
                h_prev: prev.h,
                c_prev: prev.c,
                gates,
                tanh_c,
            });
        }
        self.cache = Some(LstmCache {
            x: x.clone(),
            mask: mask.clone(),
            steps: cache_steps,
        });
        Ok(LstmOutput { hidden, state })
    }

    /// Backpropagation through time. `d_hidden` is the gradient for the
    /// hidden sequence (entries at masked steps are ignored); `d_final` is the
    /// gradient for the final state, if the state was consumed downstream.
    pub fn backward(&mut self, d_hidden: &Array3<f64>, d_final: Option<&LstmState>) -> Result<LstmGrads> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NnError::Config("lstm backward without forward".into()))?;
        let (steps, batch, _) = cache.x.dim();
        let h_units = self.units;
        check_shape("lstm hidden gradient", &[steps, batch, h_units], d_hidden.shape())?;
        let mut dh_next = Array2::zeros((batch, h_units));
        let mut dc_next = Array2::zeros((batch, h_units));
        if let Some(d) = d_final {
            check_shape("lstm final state gradient", &[batch, h_units], d.h.shape())?;
            dh_next.assign(&d.h);
            dc_next.assign(&d.c);
        }
        let mut dx = Array3::zeros(cache.x.raw_dim());
        let kernel_t = self.kernel.value.t().to_owned();
        let recurrent_t = self.recurrent.value.t().to_owned();
        for t in (0..steps).rev() {
            let step = &cache.steps[t];
            let step_mask = cache.mask.row(t);
            let mut dh = dh_next.clone();
            for b in 0..batch {
                if step_mask[b] {
                    dh.row_mut(b).scaled_add(1.0, &d_hidden.slice(s![t, b, ..]));
                }
            }
            let gates = &step.gates;
            let i = gates.slice(s![.., 0..h_units]);
            let f = gates.slice(s![.., h_units..2 * h_units]);
            let g = gates.slice(s![.., 2 * h_units..3 * h_units]);
            let o = gates.slice(s![.., 3 * h_units..]);

            let mut dz = Array2::zeros((batch, 4 * h_units));
            let mut dc_tot = dc_next.clone();
            Zip::from(&mut dc_tot)
                .and(&dh)
                .and(&o)
                .and(&step.tanh_c)
                .for_each(|dc, &dhv, &ov, &tc| *dc += dhv * ov * (1.0 - tc * tc));
            Zip::from(dz.slice_mut(s![.., 0..h_units]))
                .and(&dc_tot)
                .and(&g)
                .and(&i)
                .for_each(|d, &dc, &gv, &iv| *d = dc * gv * iv * (1.0 - iv));
            Zip::from(dz.slice_mut(s![.., h_units..2 * h_units]))
                .and(&dc_tot)
                .and(&step.c_prev)
                .and(&f)
                .for_each(|d, &dc, &cp, &fv| *d = dc * cp * fv * (1.0 - fv));
            Zip::from(dz.slice_mut(s![.., 2 * h_units..3 * h_units]))
                .and(&dc_tot)
                .and(&i)
                .and(&g)
                .for_each(|d, &dc, &iv, &gv| *d = dc * iv * (1.0 - gv * gv));
            Zip::from(dz.slice_mut(s![.., 3 * h_units..]))
                .and(&dh)
                .and(&step.tanh_c)
                .and(&o)
                .for_each(|d, &dhv, &tc, &ov| *d = dhv * tc * ov * (1.0 - ov));
            for b in 0..batch {
                if !step_mask[b] {
                    dz.row_mut(b).fill(0.0);
                }
            }

            let xt: ArrayView2<f64> = cache.x.index_axis(Axis(0), t);
            self.kernel.grad += &xt.t().dot(&dz);
            self.recurrent.grad += &step.h_prev.t().dot(&dz);
            self.bias.grad.row_mut(0).scaled_add(1.0, &dz.sum_axis(Axis(0)));
            dx.index_axis_mut(Axis(0), t).assign(&dz.dot(&kernel_t));

            let mut dh_prev = dz.dot(&recurrent_t);
            let mut dc_prev = &dc_tot * &f;
            for b in 0..batch {
                if !step_mask[b] {
                    dh_prev.row_mut(b).assign(&dh_next.row(b));
                    dc_prev.row_mut(b).assign(&dc_next.row(b));
                }
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        Ok(LstmGrads {
            input: dx,
            initial_state: LstmState { h: dh_next, c: dc_next },
        })
    }
}

impl HasParams for Lstm {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.recurrent, &mut self.bias]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.kernel, &self.recurrent, &self.bias]
    }
}
