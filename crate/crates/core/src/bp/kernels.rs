//! Factor-to-variable and variable-to-factor message updates.
//!
//! Messages are pairs `[m(0), m(1)]`. Incoming messages need only be
//! positive; outgoing messages are normalized. Every update is linear in the
//! factor degree: products over `j ≠ i` come from prefix and suffix
//! accumulations, never from division.

/// Counts elementary steps of a kernel, for checking that work grows
/// linearly with degree.
pub trait OpCounter {
    fn add(&mut self, n: u64);
}

/// Counter that discards everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoCount;

impl OpCounter for NoCount {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCount(pub u64);

impl OpCounter for OpCount {
    fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

#[inline]
fn normalize(m: [f64; 2]) -> [f64; 2] {
    let s = m[0] + m[1];
    [m[0] / s, m[1] / s]
}

/// Noisy-or factor with leak `leak` and strength `beta`; `incoming[0]` is the
/// message from the output `Z`, `incoming[1..]` from the inputs `Y_i`.
/// Writes the outgoing messages in the same layout.
///
/// With normalized inputs each input contributes `ln(1 - ρ·m_j(1))` to
/// `ln μ_{F→Z}(0)`, so the whole update is a sum of logs:
/// `μ_{F→Z} = (e^L, 1 - e^L)` and
/// `μ_{F→Y_i}(y) = μ_Z(0)·e^q + μ_Z(1)·(1 - e^q)` with `q = L_{≠i} - β·y`.
pub fn noisy_or_messages<C: OpCounter>(
    leak: f64,
    beta: f64,
    incoming: &[[f64; 2]],
    out: &mut [[f64; 2]],
    scratch: &mut Vec<f64>,
    ops: &mut C,
) {
    let n = incoming.len() - 1;
    let rho = -(-beta).exp_m1();
    let base = (-leak).ln_1p();

    // scratch[j] holds a_j, then is overwritten with suffix sums
    scratch.clear();
    scratch.extend(incoming[1..].iter().map(|&m| {
        let p1 = m[1] / (m[0] + m[1]);
        (-rho * p1).ln_1p()
    }));
    ops.add(n as u64);
    let mut acc = 0.0;
    for a in scratch.iter_mut().rev() {
        let v = *a;
        *a = acc;
        acc += v;
    }
    ops.add(n as u64);
    let total = base + acc;
    out[0] = [total.exp(), -total.exp_m1()];

    let mz = normalize(incoming[0]);
    let mut prefix = 0.0;
    for i in 0..n {
        let others = base + prefix + scratch[i];
        let q1 = if beta.is_infinite() { f64::NEG_INFINITY } else { others - beta };
        let m0 = mz[0] * others.exp() - mz[1] * others.exp_m1();
        let m1 = mz[0] * q1.exp() - mz[1] * q1.exp_m1();
        out[i + 1] = normalize([m0, m1]);
        // recover a_i from the suffix sums to extend the prefix
        let a_i = {
            let m = incoming[i + 1];
            (-rho * (m[1] / (m[0] + m[1]))).ln_1p()
        };
        prefix += a_i;
    }
    ops.add(n as u64);
}

/// Switched categorical factor with outcome probabilities `theta`;
/// `incoming[0]` is the message from the switch `Y`, `incoming[1..]` from the
/// outcomes `Z_i`. With `Y = 0` every outcome is off and the factor is 1; with
/// `Y = 1` exactly one outcome is on and contributes `θ_i`.
///
/// Dividing out `∏ μ_{Z_j}(0)`, with `s_i = θ_i·μ_{Z_i}(1)/μ_{Z_i}(0)`:
/// `μ_{F→Y} ∝ (1, Σ s_i)` and `μ_{F→Z_i} ∝ (μ_Y(0) + μ_Y(1)·Σ_{j≠i} s_j, μ_Y(1)·θ_i)`.
pub fn categorical_messages<C: OpCounter>(
    theta: &[f64],
    incoming: &[[f64; 2]],
    out: &mut [[f64; 2]],
    scratch: &mut Vec<f64>,
    ops: &mut C,
) {
    let n = theta.len();
    debug_assert_eq!(incoming.len(), n + 1);
    scratch.clear();
    scratch.extend(incoming[1..].iter().zip(theta).map(|(m, &t)| t * (m[1] / m[0])));
    ops.add(n as u64);
    let mut acc = 0.0;
    for s in scratch.iter_mut().rev() {
        let v = *s;
        *s = acc;
        acc += v;
    }
    ops.add(n as u64);
    out[0] = normalize([1.0, acc]);

    let my = normalize(incoming[0]);
    let mut prefix = 0.0;
    for i in 0..n {
        let others = prefix + scratch[i];
        out[i + 1] = normalize([my[0] + my[1] * others, my[1] * theta[i]]);
        let m = incoming[i + 1];
        prefix += theta[i] * (m[1] / m[0]);
    }
    ops.add(n as u64);
}

/// Largest log-odds magnitude allowed by a message floor.
pub fn floor_log_odds(floor: f64) -> f64 {
    ((1.0 - floor) / floor).ln()
}

/// Normalized pair with log-odds `lo`, computed without cancellation.
#[inline]
pub fn pair_from_log_odds(lo: f64) -> [f64; 2] {
    let e = (-lo.abs()).exp();
    let small = e / (1.0 + e);
    let large = 1.0 / (1.0 + e);
    if lo >= 0.0 {
        [small, large]
    } else {
        [large, small]
    }
}

#[inline]
pub fn log_odds(m: [f64; 2]) -> f64 {
    m[1].ln() - m[0].ln()
}

/// Variable-to-factor messages: for each incident factor, the product of the
/// evidence and every other incoming factor message, normalized and floored.
pub fn variable_messages(evidence: [f64; 2], incoming: &[[f64; 2]], out: &mut [[f64; 2]], floor: f64) {
    let cap = floor_log_odds(floor);
    let total = log_odds(evidence) + incoming.iter().map(|&m| log_odds(m)).sum::<f64>();
    for (o, &m) in out.iter_mut().zip(incoming) {
        *o = pair_from_log_odds((total - log_odds(m)).clamp(-cap, cap));
    }
}
