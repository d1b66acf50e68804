//! Fixed-step RK4 simulation of the nonlinear model with a parameter event
//! timeline, plus signal post-processing.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::equilibrium::solve_equilibrium;
use crate::error::{Error, Result};
use crate::model::{Case, Damper};
use crate::smallsig::StateSpaceModel;

/// Any state magnitude above this ends the run as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub const OUTPUT_SIGNALS: [&str; 9] = ["p", "q", "v", "v_dc", "omega", "e_d", "e_q", "e_rf", "i_dc"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Sets a named parameter, gain or set-point.
    Set { target: String, value: f64 },
    /// Replaces the damper; new damper states start at zero.
    Damper { damper: Damper },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub action: Action,
}

impl Event {
    pub fn set(time: f64, target: &str, value: f64) -> Self {
        Self { time, action: Action::Set { target: target.to_string(), value } }
    }

    pub fn damper(time: f64, damper: Damper) -> Self {
        Self { time, action: Action::Damper { damper } }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    #[default]
    Equilibrium,
    State(Vec<f64>),
}

fn default_record() -> Vec<String> {
    ["v_dc", "p", "q", "v", "omega"].iter().map(|s| s.to_string()).collect()
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub case: Case,
    /// Simulated time span, s.
    pub duration: f64,
    /// Integration step, s.
    pub dt: f64,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub initial: Initial,
    /// Recorded signals: state names or algebraic outputs.
    #[serde(default = "default_record")]
    pub record: Vec<String>,
    /// Record every `record_stride`-th step.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

impl Scenario {
    pub fn new(case: Case, duration: f64, dt: f64) -> Self {
        Self {
            case,
            duration,
            dt,
            events: Vec::new(),
            initial: Initial::Equilibrium,
            record: default_record(),
            record_stride: 1,
        }
    }

    fn step_index(&self, time: f64, what: &str) -> Result<usize> {
        let k = (time / self.dt).round();
        if !(time >= 0.0) || (k * self.dt - time).abs() > 1e-9 * time.max(1.0) {
            return Err(Error::InvalidScenario(format!(
                "{what} at t = {time} is not a multiple of dt = {}",
                self.dt
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.case.validate()?;
        if !(self.dt > 0.0 && self.duration > 0.0) {
            return Err(Error::InvalidScenario("dt and duration must be positive".into()));
        }
        let f_res = self.case.params.f_res_hz();
        if self.dt > 1.0 / (20.0 * f_res) {
            return Err(Error::InvalidScenario(format!(
                "dt = {} does not resolve the {f_res:.1} Hz resonance (needs dt <= {:.3e})",
                self.dt,
                1.0 / (20.0 * f_res)
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidScenario("record_stride must be at least 1".into()));
        }
        self.step_index(self.duration, "duration")?;
        if self.events.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::InvalidScenario("events must be sorted by time".into()));
        }
        let mut case = self.case.clone();
        for e in &self.events {
            self.step_index(e.time, "event")?;
            if e.time > self.duration {
                return Err(Error::InvalidScenario(format!("event at t = {} after the end", e.time)));
            }
            apply(&mut case, &e.action)?;
            case.validate()?;
        }
        let known = |name: &str| {
            OUTPUT_SIGNALS.contains(&name)
                || crate::model::StateLayout::new(&case.control, &Damper::Filtered { k_d: 0.0, t_d: 1.0 })
                    .index_of(name)
                    .is_some()
        };
        if let Some(bad) = self.record.iter().find(|n| !known(n)) {
            return Err(Error::InvalidScenario(format!("unknown signal `{bad}`")));
        }
        if let Initial::State(x) = &self.initial {
            if x.len() != self.case.layout().dim() {
                return Err(Error::DimensionMismatch { expected: self.case.layout().dim(), got: x.len() });
            }
        }
        Ok(())
    }
}

fn apply(case: &mut Case, action: &Action) -> Result<()> {
    match action {
        Action::Set { target, value } => case.set(target, *value),
        Action::Damper { damper } => {
            *case = case.with_damper(*damper);
            Ok(())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub names: Vec<String>,
    /// One column per name, aligned with `t`.
    pub columns: Vec<Vec<f64>>,
    /// Time at which the run was cut short by divergence.
    pub diverged_at: Option<f64>,
    /// Final state and its layout names.
    pub final_state: Vec<f64>,
}

impl TimeSeries {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn dt(&self) -> f64 {
        if self.t.len() > 1 {
            self.t[1] - self.t[0]
        } else {
            0.0
        }
    }

    /// Samples with `t0 <= t < t1`.
    pub fn window(&self, name: &str, t0: f64, t1: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let col = self.column(name)?;
        let (t, y): (Vec<f64>, Vec<f64>) = self
            .t
            .iter()
            .zip(col)
            .filter(|(t, _)| **t >= t0 - 1e-12 && **t < t1 - 1e-12)
            .map(|(t, y)| (*t, *y))
            .unzip();
        Some((t, y))
    }
}

fn signal(case: &Case, x: &[f64], name: &str) -> f64 {
    if let Some(i) = case.layout().index_of(name) {
        return x[i];
    }
    match case.outputs(x) {
        Ok(o) => match name {
            "p" => o.p,
            "q" => o.q,
            "v" => o.v,
            "v_dc" => o.v_dc,
            "omega" => o.omega,
            "e_d" => o.e_d,
            "e_q" => o.e_q,
            "e_rf" => o.e_rf,
            "i_dc" => o.i_dc,
            // damper states before the damper is enabled
            _ => 0.0,
        },
        Err(_) => f64::NAN,
    }
}

struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n] }
    }

    fn resize(&mut self, n: usize) {
        for k in self.k.iter_mut() {
            k.resize(n, 0.0);
        }
        self.tmp.resize(n, 0.0);
    }

    fn step(&mut self, case: &Case, x: &mut [f64], h: f64) -> Result<()> {
        let n = x.len();
        let [k1, k2, k3, k4] = &mut self.k;
        case.rhs(x, k1)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        case.rhs(&self.tmp, k2)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        case.rhs(&self.tmp, k3)?;
        for i in 0..n {
            self.tmp[i] = x[i] + h * k3[i];
        }
        case.rhs(&self.tmp, k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }
}

/// Runs the scenario; divergence is reported through
/// [`TimeSeries::diverged_at`] with the series truncated there.
pub fn simulate_truncated(scenario: &Scenario) -> Result<TimeSeries> {
    scenario.validate()?;
    let dt = scenario.dt;
    let mut case = scenario.case.clone();
    let mut x = match &scenario.initial {
        Initial::Equilibrium => solve_equilibrium(&case)?.x0,
        Initial::State(x) => x.clone(),
    };
    let n_steps = scenario.step_index(scenario.duration, "duration")?;
    let events: Vec<(usize, &Action)> = scenario
        .events
        .iter()
        .map(|e| Ok((scenario.step_index(e.time, "event")?, &e.action)))
        .collect::<Result<_>>()?;
    let mut next_event = 0;

    let names = scenario.record.clone();
    let cap = n_steps / scenario.record_stride + 1;
    let mut t_out = Vec::with_capacity(cap);
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(cap); names.len()];
    let mut rk = Rk4::new(x.len());
    let mut diverged_at = None;

    for k in 0..=n_steps {
        while next_event < events.len() && events[next_event].0 == k {
            let layout = case.layout();
            apply(&mut case, events[next_event].1)?;
            let new_layout = case.layout();
            if new_layout != layout {
                x = layout.remap(&x, &new_layout);
                rk.resize(x.len());
            }
            next_event += 1;
        }
        let t = k as f64 * dt;
        if k % scenario.record_stride == 0 {
            t_out.push(t);
            for (c, n) in cols.iter_mut().zip(&names) {
                c.push(signal(&case, &x, n));
            }
        }
        if k == n_steps {
            break;
        }
        let ok = rk.step(&case, &mut x, dt).is_ok()
            && x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT);
        if !ok {
            diverged_at = Some(t + dt);
            break;
        }
    }
    Ok(TimeSeries { t: t_out, names, columns: cols, diverged_at, final_state: x })
}

/// Runs the scenario, failing with [`Error::Diverged`] if any state blows up.
pub fn simulate(scenario: &Scenario) -> Result<TimeSeries> {
    let ts = simulate_truncated(scenario)?;
    match ts.diverged_at {
        Some(time) => Err(Error::Diverged { time }),
        None => Ok(ts),
    }
}

/// Response of the linear model to a step of size `amplitude` on one input,
/// as output deviations sampled every step.
pub fn lti_step_response(
    ss: &StateSpaceModel,
    input: usize,
    amplitude: f64,
    dt: f64,
    n_steps: usize,
) -> Vec<Vec<f64>> {
    let n = ss.a.nrows();
    let b: Vec<f64> = ss.b.column(input).iter().map(|v| v * amplitude).collect();
    let f = |x: &[f64]| -> Vec<f64> {
        let ax = &ss.a * nalgebra::DVector::from_column_slice(x);
        (0..n).map(|i| ax[i] + b[i]).collect()
    };
    let out = |x: &[f64]| -> Vec<f64> {
        let cx = &ss.c * nalgebra::DVector::from_column_slice(x);
        (0..ss.c.nrows()).map(|i| cx[i] + ss.d[(i, input)] * amplitude).collect()
    };
    let mut x = vec![0.0; n];
    let mut ys = vec![out(&x)];
    for _ in 0..n_steps {
        let k1 = f(&x);
        let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
        let k2 = f(&x2);
        let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2[i]).collect();
        let k3 = f(&x3);
        let x4: Vec<f64> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
        let k4 = f(&x4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        ys.push(out(&x));
    }
    ys
}

/// First-order low-pass applied forward then backward (zero phase).
pub fn zero_phase_lowpass(y: &[f64], dt: f64, corner_hz: f64) -> Vec<f64> {
    let tau = 1.0 / (2.0 * PI * corner_hz);
    let a = dt / (tau + dt);
    let pass = |input: &mut Vec<f64>| {
        if let Some(&first) = input.first() {
            let mut s = first;
            for v in input.iter_mut() {
                s += a * (*v - s);
                *v = s;
            }
        }
    };
    let mut out = y.to_vec();
    pass(&mut out);
    out.reverse();
    pass(&mut out);
    out.reverse();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeMetrics {
    /// Least-squares slope of the log envelope, 1/s.
    pub growth_rate: f64,
    /// Spectral peak inside the band; absent when the band holds no energy.
    pub dominant_freq_hz: Option<f64>,
    /// `(window centre time, amplitude)` pairs behind the growth estimate.
    pub envelope: Vec<(f64, f64)>,
}

/// Amplitude floor below which the band is treated as empty.
const NOISE_FLOOR: f64 = 1e-12;

fn dtft_amplitude(y: &[f64], dt: f64, f: f64) -> f64 {
    let w = Complex64::from_polar(1.0, -2.0 * PI * f * dt);
    let mut rot = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, v) in y.iter().enumerate() {
        acc += rot * v;
        rot *= w;
        if n % 1024 == 1023 {
            rot /= rot.norm();
        }
    }
    2.0 * acc.norm() / y.len() as f64
}

/// Dominant in-band frequency and exponential growth rate of an
/// oscillation in a uniformly sampled signal.
pub fn envelope_metrics(t: &[f64], y: &[f64], band_hz: (f64, f64)) -> Result<EnvelopeMetrics> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::InsufficientData("need at least three aligned samples".into()));
    }
    let dt = t[1] - t[0];
    let span = t[t.len() - 1] - t[0];
    if span < 0.2 - 1e-9 {
        return Err(Error::InsufficientData(format!("{span:.3} s of data, need at least 0.2 s")));
    }
    let (f_lo, f_hi) = band_hz;
    if !(f_lo > 0.0 && f_hi > f_lo && f_hi < 0.5 / dt) {
        return Err(Error::InsufficientData(format!(
            "band [{f_lo}, {f_hi}] Hz invalid for Nyquist {} Hz",
            0.5 / dt
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let y: Vec<f64> = y.iter().map(|v| v - mean).collect();

    // coarse peak on a zero-padded FFT grid, refined by ternary search
    let n_fft = (2 * y.len()).next_power_of_two();
    let mut buf: Vec<Complex64> = y.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    let df = 1.0 / (n_fft as f64 * dt);
    let k_lo = (f_lo / df).ceil() as usize;
    let k_hi = ((f_hi / df).floor() as usize).min(n_fft / 2);
    let peak = (k_lo..=k_hi).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()));
    let Some(kp) = peak else {
        return Err(Error::InsufficientData("band contains no frequency bins".into()));
    };
    if 2.0 * buf[kp].norm() / y.len() as f64 <= NOISE_FLOOR {
        return Ok(EnvelopeMetrics { growth_rate: 0.0, dominant_freq_hz: None, envelope: Vec::new() });
    }
    let (mut a, mut b) = ((kp as f64 - 1.0) * df, (kp as f64 + 1.0) * df);
    for _ in 0..40 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if dtft_amplitude(&y, dt, m1) < dtft_amplitude(&y, dt, m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    let f0 = 0.5 * (a + b);

    // Hann-windowed projection on 40-period windows, half overlap
    let len = ((40.0 / (f0 * dt)).round() as usize).max(8);
    let hop = len / 2;
    if y.len() < len + 2 * hop {
        return Err(Error::InsufficientData("fewer than three envelope windows".into()));
    }
    let hann: Vec<f64> = (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        .collect();
    let wsum: f64 = hann.iter().sum();
    let mut envelope = Vec::new();
    let mut start = 0;
    while start + len <= y.len() {
        let seg = &y[start..start + len];
        let m = seg.iter().sum::<f64>() / len as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, v) in seg.iter().enumerate() {
            acc += Complex64::from_polar(hann[i] * (v - m), -2.0 * PI * f0 * i as f64 * dt);
        }
        let amp = 2.0 * acc.norm() / wsum;
        envelope.push((t[start] + 0.5 * (len - 1) as f64 * dt, amp));
        start += hop;
    }
    let pts: Vec<(f64, f64)> = envelope.iter().filter(|(_, a)| *a > 0.0).map(|(t, a)| (*t, a.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData("envelope vanished".into()));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    Ok(EnvelopeMetrics { growth_rate: sxy / sxx, dominant_freq_hz: Some(f0), envelope })
}

/// Largest in-band envelope amplitude over `t >= t0`, measured with the
/// same windowed projection at frequency `f0`.
pub fn envelope_peak_after(t: &[f64], y: &[f64], f0: f64, t0: f64) -> f64 {
    let dt = t[1] - t[0];
    let len = ((40.0 / (f0 * dt)).round() as usize).max(8);
    let start = t.iter().position(|v| *v >= t0).unwrap_or(t.len());
    let hann: Vec<f64> = (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        .collect();
    let wsum: f64 = hann.iter().sum();
    let mut best: f64 = 0.0;
    let mut s = start;
    while s + len <= y.len() {
        let seg = &y[s..s + len];
        let m = seg.iter().sum::<f64>() / len as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, v) in seg.iter().enumerate() {
            acc += Complex64::from_polar(hann[i] * (v - m), -2.0 * PI * f0 * i as f64 * dt);
        }
        best = best.max(2.0 * acc.norm() / wsum);
        s += len / 2;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_growing_sine() {
        let dt = 1e-5;
        let t: Vec<f64> = (0..30_000).map(|k| k as f64 * dt).collect();
        let y: Vec<f64> = t.iter().map(|t| (0.5 * t).exp() * (2.0 * PI * 900.0 * t).sin()).collect();
        let m = envelope_metrics(&t, &y, (500.0, 1500.0)).unwrap();
        assert!((m.growth_rate - 0.5).abs() < 0.02, "{}", m.growth_rate);
        assert!((m.dominant_freq_hz.unwrap() - 900.0).abs() < 2.0);
    }

    #[test]
    fn constant_signal_has_no_peak() {
        let t: Vec<f64> = (0..25_000).map(|k| k as f64 * 1e-5).collect();
        let y = vec![0.7; t.len()];
        let m = envelope_metrics(&t, &y, (500.0, 1500.0)).unwrap();
        assert_eq!(m.dominant_freq_hz, None);
        assert_eq!(m.growth_rate, 0.0);
    }

    #[test]
    fn short_record_rejected() {
        let t: Vec<f64> = (0..1000).map(|k| k as f64 * 1e-5).collect();
        let y = vec![0.0; 1000];
        assert!(matches!(envelope_metrics(&t, &y, (500.0, 1500.0)), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn lowpass_keeps_dc_and_attenuates_resonance() {
        let dt = 1e-5;
        let y: Vec<f64> = (0..100_000)
            .map(|k| 1.0 + 0.1 * (2.0 * PI * 900.0 * k as f64 * dt).sin())
            .collect();
        let f = zero_phase_lowpass(&y, dt, 20.0);
        let mid = &f[20_000..80_000];
        assert!(mid.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn scenario_validation() {
        let c = Case::reference();
        let mut s = Scenario::new(c.clone(), 0.01, 1e-4);
        assert!(s.validate().is_err(), "coarse step must be rejected");
        s.dt = 1e-5;
        s.validate().unwrap();
        s.events = vec![Event::set(0.005, "q_st", 0.1), Event::set(0.001, "q_st", 0.0)];
        assert!(s.validate().is_err(), "unsorted events");
        s.events = vec![Event::set(0.0050005, "q_st", 0.1)];
        assert!(s.validate().is_err(), "off-grid event");
        s.events = vec![Event::set(0.005, "nope", 0.1)];
        assert!(s.validate().is_err());
        s.events.clear();
        s.record = vec!["bogus".into()];
        assert!(s.validate().is_err());
    }

    #[test]
    fn equilibrium_hold() {
        let mut s = Scenario::new(Case::reference(), 0.05, 1e-5);
        s.record_stride = 100;
        let ts = simulate(&s).unwrap();
        for c in &ts.columns {
            assert!(c.iter().all(|v| (v - c[0]).abs() < 1e-9));
        }
    }

    #[test]
    fn damper_event_extends_state() {
        let mut s = Scenario::new(Case::reference(), 0.01, 1e-5);
        s.events = vec![Event::damper(0.005, Damper::Filtered { k_d: 4e-6, t_d: 1e-4 })];
        s.record = vec!["ad_d".into(), "q".into()];
        let ts = simulate(&s).unwrap();
        assert_eq!(ts.final_state.len(), 13);
        assert!(ts.column("ad_d").unwrap().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn scenario_json_round_trip() {
        let mut s = Scenario::new(Case::reference(), 1.0, 1e-5);
        s.events = vec![
            Event::set(0.5, "k_q", 18.0),
            Event::damper(0.6, Damper::Filtered { k_d: 4e-6, t_d: 1e-4 }),
        ];
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains(r#""action":"set""#));
        let back: Scenario = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
