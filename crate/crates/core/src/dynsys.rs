//! Discrete-time simulators: state-space LTI systems, IIR difference
//! equations, the diode saturation, and the Wiener–Hammerstein cascade.
//!
//! Systems are immutable once built. Stepping state lives in a separate
//! value owned by the caller, so independent simulations can share one
//! system across threads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Small dense row-major matrix used by the state-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if r == 0 || c == 0 {
            return Err(Error::Parameter("matrix must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Parameter("ragged matrix rows".into()));
            }
            data.extend(row.iter().map(|&x| T::of(x)));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    fn mul_vec_acc(&self, x: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            *o += acc;
        }
    }
}

/// `x[n+1] = A x[n] + B u[n]`, `y[n] = C x[n] + D u[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem<T> {
    a: Matrix<T>,
    b: Matrix<T>,
    c: Matrix<T>,
    d: Matrix<T>,
}

impl<T: Scalar> LtiSystem<T> {
    pub fn new(a: Matrix<T>, b: Matrix<T>, c: Matrix<T>, d: Matrix<T>) -> Result<Self> {
        let n = a.rows;
        if a.cols != n {
            return Err(Error::dim(
                "A",
                format!("{n}x{n}"),
                format!("{}x{}", a.rows, a.cols),
            ));
        }
        if b.rows != n {
            return Err(Error::dim(
                "B",
                format!("{n} rows"),
                format!("{} rows", b.rows),
            ));
        }
        if c.cols != n {
            return Err(Error::dim(
                "C",
                format!("{n} columns"),
                format!("{} columns", c.cols),
            ));
        }
        let (m, p) = (b.cols, c.rows);
        if d.rows != p || d.cols != m {
            return Err(Error::dim(
                "D",
                format!("{p}x{m}"),
                format!("{}x{}", d.rows, d.cols),
            ));
        }
        Ok(Self { a, b, c, d })
    }

    /// State dimension N.
    pub fn order(&self) -> usize {
        self.a.rows
    }

    /// Input dimension M.
    pub fn inputs(&self) -> usize {
        self.b.cols
    }

    /// Output dimension P.
    pub fn outputs(&self) -> usize {
        self.c.rows
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn c(&self) -> &Matrix<T> {
        &self.c
    }

    pub fn d(&self) -> &Matrix<T> {
        &self.d
    }

    /// One step from `state` under input `u`; returns `(next_state, y)`.
    pub fn step(&self, state: &[T], u: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if state.len() != self.order() {
            return Err(Error::dim("state", self.order(), state.len()));
        }
        if u.len() != self.inputs() {
            return Err(Error::dim("u", self.inputs(), u.len()));
        }
        let mut next = vec![T::zero(); self.order()];
        let mut y = vec![T::zero(); self.outputs()];
        self.step_into(state, u, &mut next, &mut y);
        Ok((next, y))
    }

    fn step_into(&self, state: &[T], u: &[T], next: &mut [T], y: &mut [T]) {
        self.a.mul_vec_acc(state, next);
        self.b.mul_vec_acc(u, next);
        self.c.mul_vec_acc(state, y);
        self.d.mul_vec_acc(u, y);
    }
}

/// How the feedback terms of a difference equation enter the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSign {
    /// `y[N] = Σ a_i u[N-i] + Σ b_j y[N-j]`
    #[default]
    Additive,
    /// `y[N] = Σ a_i u[N-i] - Σ b_j y[N-j]`
    Subtractive,
    /// `y[N] = Σ a_i u[N-i] + Σ (-1)^(j+1) b_j y[N-j]`: the coefficients are
    /// magnitudes of a denominator whose signs alternate, as in a low-pass
    /// Chebyshev design.
    Alternating,
}

impl FeedbackSign {
    fn factor(self, j: usize) -> f64 {
        match self {
            FeedbackSign::Additive => 1.0,
            FeedbackSign::Subtractive => -1.0,
            FeedbackSign::Alternating if j % 2 == 1 => 1.0,
            FeedbackSign::Alternating => -1.0,
        }
    }
}

impl FromStr for FeedbackSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" | "printed" => Ok(Self::Additive),
            "subtractive" => Ok(Self::Subtractive),
            "alternating" => Ok(Self::Alternating),
            other => Err(Error::Parameter(format!(
                "unknown feedback sign `{other}` (expected additive, subtractive or alternating)"
            ))),
        }
    }
}

/// SISO IIR difference equation of order K with feedforward `a_0..a_K` and
/// feedback `b_1..b_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct IirFilter<T> {
    ff: Vec<T>,
    fb: Vec<T>,
    sign: FeedbackSign,
    /// `fb` with the sign convention applied; added to the output.
    fb_signed: Vec<T>,
}

/// Rolling histories for an [`IirFilter`]. Index 0 is the most recent value.
#[derive(Debug, Clone, PartialEq)]
pub struct IirState<T> {
    u_hist: Vec<T>,
    y_hist: Vec<T>,
}

impl<T: Scalar> IirState<T> {
    pub fn u_hist(&self) -> &[T] {
        &self.u_hist
    }

    pub fn y_hist(&self) -> &[T] {
        &self.y_hist
    }
}

impl<T: Scalar> IirFilter<T> {
    pub fn new(ff: &[f64], fb: &[f64]) -> Result<Self> {
        if fb.is_empty() {
            return Err(Error::Parameter("filter order must be at least 1".into()));
        }
        if ff.len() != fb.len() + 1 {
            return Err(Error::dim("ff", fb.len() + 1, ff.len()));
        }
        let fb: Vec<T> = fb.iter().map(|&x| T::of(x)).collect();
        Ok(Self {
            ff: ff.iter().map(|&x| T::of(x)).collect(),
            fb_signed: fb.clone(),
            fb,
            sign: FeedbackSign::Additive,
        })
    }

    pub fn with_sign(mut self, sign: FeedbackSign) -> Self {
        self.sign = sign;
        self.fb_signed = self
            .fb
            .iter()
            .enumerate()
            .map(|(j, &b)| T::of(sign.factor(j + 1)) * b)
            .collect();
        self
    }

    pub fn order(&self) -> usize {
        self.fb.len()
    }

    pub fn feedforward(&self) -> &[T] {
        &self.ff
    }

    pub fn feedback(&self) -> &[T] {
        &self.fb
    }

    pub fn sign(&self) -> FeedbackSign {
        self.sign
    }

    /// Feedback coefficients as they are added to the output, `c_1..c_K`
    /// in `y[N] = Σ a_i u[N-i] + Σ c_j y[N-j]`.
    pub fn signed_feedback(&self) -> &[T] {
        &self.fb_signed
    }

    pub fn zero_state(&self) -> IirState<T> {
        IirState {
            u_hist: vec![T::zero(); self.order()],
            y_hist: vec![T::zero(); self.order()],
        }
    }

    /// Advances the filter by one sample, rejecting non-finite input.
    pub fn step(&self, state: &mut IirState<T>, u: T) -> Result<T> {
        if !u.is_finite() {
            return Err(Error::NonFiniteInput { index: 0 });
        }
        Ok(self.step_unchecked(state, u))
    }

    fn step_unchecked(&self, state: &mut IirState<T>, u: T) -> T {
        let mut y = self.ff[0] * u;
        for (a, up) in self.ff[1..].iter().zip(&state.u_hist) {
            y += *a * *up;
        }
        for (b, yp) in self.fb_signed.iter().zip(&state.y_hist) {
            y += *b * *yp;
        }
        state.u_hist.rotate_right(1);
        state.u_hist[0] = u;
        state.y_hist.rotate_right(1);
        state.y_hist[0] = y;
        y
    }
}

/// Piecewise-linear diode: slope 10/11 below zero, identity on
/// `[0, 3/10]`, flat at 3/10 above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiodeSaturation<T> {
    lower_slope: T,
    knee: T,
}

impl<T: Scalar> Default for DiodeSaturation<T> {
    fn default() -> Self {
        Self {
            lower_slope: T::of(10.0) / T::of(11.0),
            knee: T::of(3.0) / T::of(10.0),
        }
    }
}

impl<T: Scalar> DiodeSaturation<T> {
    pub fn lower_slope(&self) -> T {
        self.lower_slope
    }

    pub fn knee(&self) -> T {
        self.knee
    }

    #[inline]
    pub fn saturate(&self, x: T) -> T {
        if x < T::zero() {
            self.lower_slope * x
        } else if x <= self.knee {
            x
        } else {
            self.knee
        }
    }
}

/// Linear filter → static diode → linear filter.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerHammerstein<T> {
    pub front: IirFilter<T>,
    pub nonlin: DiodeSaturation<T>,
    pub back: IirFilter<T>,
}

impl<T: Scalar> WienerHammerstein<T> {
    pub fn zero_state(&self) -> (IirState<T>, IirState<T>) {
        (self.front.zero_state(), self.back.zero_state())
    }

    fn step_unchecked(&self, state: &mut (IirState<T>, IirState<T>), u: T) -> T {
        let v = self.front.step_unchecked(&mut state.0, u);
        // A diverged front filter must not be hidden by the saturation.
        let w = if v.is_finite() {
            self.nonlin.saturate(v)
        } else {
            T::nan()
        };
        self.back.step_unchecked(&mut state.1, w)
    }
}

/// A single-input single-output system that can be stepped from a
/// caller-owned state.
pub trait SisoSystem<T: Scalar> {
    type State: Clone;

    fn zero_state(&self) -> Self::State;

    /// One step. Finiteness is the caller's concern; [`simulate`] checks it.
    fn step(&self, state: &mut Self::State, u: T) -> T;
}

impl<T: Scalar> SisoSystem<T> for IirFilter<T> {
    type State = IirState<T>;

    fn zero_state(&self) -> IirState<T> {
        IirFilter::zero_state(self)
    }

    fn step(&self, state: &mut IirState<T>, u: T) -> T {
        self.step_unchecked(state, u)
    }
}

impl<T: Scalar> SisoSystem<T> for WienerHammerstein<T> {
    type State = (IirState<T>, IirState<T>);

    fn zero_state(&self) -> Self::State {
        WienerHammerstein::zero_state(self)
    }

    fn step(&self, state: &mut Self::State, u: T) -> T {
        self.step_unchecked(state, u)
    }
}

/// Scratch buffers for stepping an LTI system in place.
#[derive(Debug, Clone)]
pub struct LtiState<T> {
    x: Vec<T>,
    next: Vec<T>,
}

impl<T: Scalar> LtiState<T> {
    pub fn x(&self) -> &[T] {
        &self.x
    }
}

impl<T: Scalar> SisoSystem<T> for LtiSystem<T> {
    type State = LtiState<T>;

    fn zero_state(&self) -> LtiState<T> {
        LtiState {
            x: vec![T::zero(); self.order()],
            next: vec![T::zero(); self.order()],
        }
    }

    fn step(&self, state: &mut LtiState<T>, u: T) -> T {
        debug_assert!(self.inputs() == 1 && self.outputs() == 1);
        state.next.iter_mut().for_each(|v| *v = T::zero());
        let mut y = [T::zero()];
        self.step_into(&state.x, &[u], &mut state.next, &mut y);
        std::mem::swap(&mut state.x, &mut state.next);
        y[0]
    }
}

/// Any of the simulable system kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum System<T> {
    Lti(LtiSystem<T>),
    Iir(IirFilter<T>),
    WienerHammerstein(WienerHammerstein<T>),
}

#[derive(Debug, Clone)]
pub enum SystemState<T> {
    Lti(LtiState<T>),
    Iir(IirState<T>),
    WienerHammerstein((IirState<T>, IirState<T>)),
}

impl<T: Scalar> SisoSystem<T> for System<T> {
    type State = SystemState<T>;

    fn zero_state(&self) -> SystemState<T> {
        match self {
            System::Lti(s) => SystemState::Lti(SisoSystem::zero_state(s)),
            System::Iir(s) => SystemState::Iir(IirFilter::zero_state(s)),
            System::WienerHammerstein(s) => {
                SystemState::WienerHammerstein(WienerHammerstein::zero_state(s))
            }
        }
    }

    fn step(&self, state: &mut SystemState<T>, u: T) -> T {
        match (self, state) {
            (System::Lti(s), SystemState::Lti(st)) => SisoSystem::step(s, st, u),
            (System::Iir(s), SystemState::Iir(st)) => s.step_unchecked(st, u),
            (System::WienerHammerstein(s), SystemState::WienerHammerstein(st)) => {
                s.step_unchecked(st, u)
            }
            _ => unreachable!("state kind always matches its system"),
        }
    }
}

impl<T: Scalar> System<T> {
    fn check_siso(&self) -> Result<()> {
        if let System::Lti(s) = self {
            if s.inputs() != 1 || s.outputs() != 1 {
                return Err(Error::dim(
                    "system",
                    "single-input single-output",
                    format!("{} inputs, {} outputs", s.inputs(), s.outputs()),
                ));
            }
        }
        Ok(())
    }
}

/// Runs `system` from the zero state over `inputs`.
///
/// Fails on the first non-finite input or output, reporting its time index.
pub fn simulate<T: Scalar, S: SisoSystem<T>>(system: &S, inputs: &[T]) -> Result<Vec<T>> {
    if inputs.is_empty() {
        return Err(Error::Parameter("input sequence must be non-empty".into()));
    }
    if let Some(index) = inputs.iter().position(|u| !u.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    let mut state = system.zero_state();
    let mut out = Vec::with_capacity(inputs.len());
    for (index, &u) in inputs.iter().enumerate() {
        let y = system.step(&mut state, u);
        if !y.is_finite() {
            return Err(Error::NonFinite { index });
        }
        out.push(y);
    }
    Ok(out)
}

/// [`simulate`] for the [`System`] enum, which also rejects MIMO models.
pub fn simulate_system<T: Scalar>(system: &System<T>, inputs: &[T]) -> Result<Vec<T>> {
    system.check_siso()?;
    simulate(system, inputs)
}

/// The four benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Third-order state-space source system.
    Lti3Source,
    /// Second-order state-space target system.
    Lti2Target,
    /// Chebyshev → diode → Chebyshev cascade.
    WhBenchmark,
    /// Second-order Chebyshev source filter.
    Cheby2Source,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Lti3Source,
        Preset::Lti2Target,
        Preset::WhBenchmark,
        Preset::Cheby2Source,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Lti3Source => "lti3_source",
            Preset::Lti2Target => "lti2_target",
            Preset::WhBenchmark => "wh_benchmark",
            Preset::Cheby2Source => "cheby2_source",
        }
    }

    /// CLI shorthand.
    pub fn short_name(self) -> &'static str {
        match self {
            Preset::Lti3Source => "lti3",
            Preset::Lti2Target => "lti2",
            Preset::WhBenchmark => "wh",
            Preset::Cheby2Source => "cheby2",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL
            .iter()
            .map(|p| p.name())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Builds the system with default conventions (see [`wh_benchmark`] for
    /// the front filter's feedback sign).
    pub fn build<T: Scalar>(self) -> System<T> {
        self.build_with(WH_FRONT_DEFAULT_SIGN)
    }

    /// Builds the system, using `wh_front_sign` for the cascade's front
    /// filter. Other presets ignore it.
    pub fn build_with<T: Scalar>(self, wh_front_sign: FeedbackSign) -> System<T> {
        match self {
            Preset::Lti3Source => System::Lti(lti3_source()),
            Preset::Lti2Target => System::Lti(lti2_target()),
            Preset::WhBenchmark => System::WienerHammerstein(wh_benchmark(wh_front_sign)),
            Preset::Cheby2Source => System::Iir(cheby2_source()),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s || p.short_name() == s)
            .ok_or_else(|| Error::UnknownPreset {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

/// Looks a preset up by name and builds it.
pub fn preset<T: Scalar>(name: &str) -> Result<System<T>> {
    Ok(name.parse::<Preset>()?.build())
}

/// Feedback sign applied to the cascade's front filter by [`Preset::build`].
///
/// Under additive feedback the front filter has a pole near |z| = 3.007 and
/// overflows within a few hundred samples. Subtractive feedback is stable
/// but places the poles near z = -1, which against the low-pass numerator
/// leaves almost no output. Alternating signs give the Chebyshev low-pass
/// the coefficients describe: poles at |z| ≈ 0.896, 0.896, 0.786 and unit
/// DC gain.
pub const WH_FRONT_DEFAULT_SIGN: FeedbackSign = FeedbackSign::Alternating;

pub fn lti3_source<T: Scalar>() -> LtiSystem<T> {
    LtiSystem::new(
        Matrix::from_rows(&[
            &[0.60, 0.00, 0.00],
            &[0.70, 0.15, -0.80],
            &[0.45, 0.80, 0.45],
        ])
        .unwrap(),
        Matrix::from_rows(&[&[1.60], &[0.70], &[0.50]]).unwrap(),
        Matrix::from_rows(&[&[0.05, 0.10, 0.20]]).unwrap(),
        Matrix::from_rows(&[&[0.01]]).unwrap(),
    )
    .unwrap()
}

pub fn lti2_target<T: Scalar>() -> LtiSystem<T> {
    LtiSystem::new(
        Matrix::from_rows(&[&[0.20, -0.70], &[0.70, 0.50]]).unwrap(),
        Matrix::from_rows(&[&[1.00], &[0.70]]).unwrap(),
        Matrix::from_rows(&[&[0.10, 0.25]]).unwrap(),
        Matrix::from_rows(&[&[0.15]]).unwrap(),
    )
    .unwrap()
}

/// Third-order front Chebyshev filter, coefficients and additive feedback
/// exactly as printed.
pub fn cheby3_front<T: Scalar>() -> IirFilter<T> {
    IirFilter::new(&[0.0083, 0.0248, 0.0248, 0.0083], &[2.2800, 1.9766, 0.6307]).unwrap()
}

/// Third-order back Chebyshev filter (additive feedback, as printed).
pub fn cheby3_back<T: Scalar>() -> IirFilter<T> {
    IirFilter::new(
        &[0.7452, 1.3902, 1.3902, 0.7452],
        &[-1.4250, -1.2920, -0.5538],
    )
    .unwrap()
}

pub fn cheby2_source<T: Scalar>() -> IirFilter<T> {
    IirFilter::new(&[0.0635, 0.1270, 0.0635], &[1.2129, -0.6646]).unwrap()
}

pub fn wh_benchmark<T: Scalar>(front_sign: FeedbackSign) -> WienerHammerstein<T> {
    WienerHammerstein {
        front: cheby3_front().with_sign(front_sign),
        nonlin: DiodeSaturation::default(),
        back: cheby3_back(),
    }
}
