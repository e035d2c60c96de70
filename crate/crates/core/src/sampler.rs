//! First-order Euler integration of a learned velocity field, on a
//! shift-warped time grid, with optional classifier-free guidance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::flowmatch::shift_transform;
use crate::nn::VelocityModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSchedule {
    pub steps: usize,
    pub shift: f64,
    /// `steps + 1` increasing times from exactly 0 to exactly 1.
    pub timesteps: Vec<f64>,
}

impl SampleSchedule {
    pub fn new(steps: usize, shift: f64) -> Result<Self> {
        if steps == 0 {
            return Err(config("sampler needs at least one step"));
        }
        let mut timesteps = (0..=steps)
            .map(|i| shift_transform(i as f64 / steps as f64, shift))
            .collect::<Result<Vec<_>>>()?;
        timesteps[0] = 0.0;
        timesteps[steps] = 1.0;
        Ok(Self { steps, shift, timesteps })
    }

    /// Step sizes `t_{i+1} - t_i`.
    pub fn deltas(&self) -> Vec<f64> {
        self.timesteps.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// `make_schedule` under its operation name.
pub fn make_schedule(steps: usize, shift: f64) -> Result<SampleSchedule> {
    SampleSchedule::new(steps, shift)
}

/// `v_u + scale (v_c - v_u)`; returns `v_c` / `v_u` verbatim at scale 1 / 0.
pub fn cfg_combine(v_uncond: &Tensor, v_cond: &Tensor, scale: f64) -> Result<Tensor> {
    if v_uncond.shape() != v_cond.shape() {
        return Err(Error::Shape(format!("cfg shapes {:?} vs {:?}", v_uncond.shape(), v_cond.shape())));
    }
    if scale == 1.0 {
        return Ok(v_cond.clone());
    }
    if scale == 0.0 {
        return Ok(v_uncond.clone());
    }
    Ok(v_uncond.add(&v_cond.sub(v_uncond)?.scale(scale))?)
}

#[derive(Clone, Debug)]
pub struct GuidanceConfig {
    pub scale: f64,
    /// Conditioning rows used for the unconditional branch (empty prompt).
    pub uncond: Tensor,
}

impl GuidanceConfig {
    pub fn new(scale: f64, uncond: Tensor) -> Result<Self> {
        if !(scale >= 0.0) {
            return Err(config(format!("cfg scale must be >= 0, got {scale}")));
        }
        Ok(Self { scale, uncond })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub state_norm: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "step,t,dt,state_norm")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.step, r.t, r.dt, r.state_norm)?;
    }
    Ok(())
}

/// Guided velocity at one grid point: one model call when the scale is 1
/// (or there is no guidance), two otherwise.
pub fn guided_velocity(
    model: &dyn VelocityModel,
    params: &[Tensor],
    x: &Tensor,
    t: f64,
    guidance: Option<&GuidanceConfig>,
    cond: &Tensor,
) -> Result<Tensor> {
    let tt = vec![t; x.shape()[0]];
    let v_cond = model.velocity(params, x, &tt, cond)?;
    match guidance {
        Some(g) if g.scale != 1.0 => {
            let v_uncond = model.velocity(params, x, &tt, &g.uncond)?;
            cfg_combine(&v_uncond, &v_cond, g.scale)
        }
        _ => Ok(v_cond),
    }
}

/// Integrates `x ← x + Δ_i v(x, t_i)` from `x0` over `schedule`.
pub fn euler_sample(
    model: &dyn VelocityModel,
    params: &[Tensor],
    x0: &Tensor,
    schedule: &SampleSchedule,
    guidance: Option<&GuidanceConfig>,
    cond: &Tensor,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<Tensor> {
    let mut x = x0.clone();
    for (i, dt) in schedule.deltas().into_iter().enumerate() {
        let t = schedule.timesteps[i];
        let v = guided_velocity(model, params, &x, t, guidance, cond)?;
        x = x.add(&v.scale(dt))?;
        if !x.all_finite() {
            return Err(Error::NonFinite { context: "euler sampler state".into(), step: i });
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceRow { step: i, t, dt, state_norm: x.norm() });
        }
    }
    Ok(x)
}
