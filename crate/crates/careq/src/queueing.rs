//! Delay functions mapping annual flow to expected waiting time, their
//! strictly increasing extensions to negative flows, exact or numeric
//! inverses, and the convex integrals used by the equilibrium potential.
//!
//! # Model
//!
//! A facility level receives an annual flow `x` (patients/year) spread evenly
//! over `capacity` doctor-hours/year, producing a per-queue hourly arrival
//! rate `x_q = x / capacity`. Each queue is M/M/1 (service rate `mu`) or
//! M/M/s (`s` servers, rate `mu` each), and a visit traverses `m >= 1`
//! identically loaded queues in sequence, so the level wait is
//!
//! ```text
//! wait(x) = w0 + m * Wq(x_q)          (hours)
//! ```
//!
//! with `w0` the zero-flow offset and `Wq` the per-queue expected queueing
//! delay (service time excluded):
//!
//! * M/M/1: `Wq = x_q / (mu * (mu - x_q))`
//! * M/M/s: `Wq = C(s, a) / (s*mu - x_q)` with offered load `a = x_q / mu`
//!   and `C` the Erlang-C probability of waiting, computed through the
//!   numerically stable Erlang-B recursion.
//!
//! The wait diverges at the saturation flow `x_max = capacity * s * mu`. For
//! negative flows the function continues linearly, `wait(x) = w0 + x_q`,
//! which keeps it strictly increasing and continuously differentiable at 0
//! in the M/M/1 case (slopes match when `mu^2/m = 1`; continuity always
//! holds). That extension makes the inverse total on the reals and the
//! integral `H` globally convex, which is what the equilibrium potential
//! needs.
//!
//! All operations are pure functions over an immutable [`DelayModel`];
//! concurrent use is unrestricted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::FacilityLevel;

/// Queueing regime of a single queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueKind {
    /// Single-server Markovian queue.
    MM1,
    /// Multi-server Markovian queue with `servers` servers.
    MMs,
}

/// A level's delay model: queue regime plus the scaling constants that turn
/// annual level flow into per-queue load and per-queue delay into level wait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    /// Queue regime.
    pub kind: QueueKind,
    /// Service rate per server (patients per doctor-hour).
    pub service_rate: f64,
    /// Servers per queue.
    pub servers: u32,
    /// Sequential-queue multiplier `m >= 1`.
    pub multiplier: f64,
    /// Annual capacity (doctor-hours/year) the flow divides over.
    pub capacity: f64,
    /// Annual opening hours; retained for unit bookkeeping only, since
    /// `capacity` is already expressed in doctor-hours/year.
    pub hours_per_year: f64,
    /// Expected wait at zero flow (hours).
    pub zero_flow_wait: f64,
}

/// Error raised when a wait is requested at or beyond saturation.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("flow {flow} meets or exceeds the saturation level {saturation}")]
pub struct SaturationError {
    /// Offending annual flow.
    pub flow: f64,
    /// Saturation flow of the model.
    pub saturation: f64,
}

impl DelayModel {
    /// Builds the delay model of a facility level; `servers == 1` selects
    /// the single-server regime.
    pub fn from_level(level: &FacilityLevel, hours_per_year: f64) -> Self {
        DelayModel {
            kind: if level.servers == 1 {
                QueueKind::MM1
            } else {
                QueueKind::MMs
            },
            service_rate: level.service_rate,
            servers: level.servers,
            multiplier: level.multiplier,
            capacity: level.capacity,
            hours_per_year,
            zero_flow_wait: level.zero_flow_wait,
        }
    }

    /// Saturation flow `capacity * servers * service_rate` (patients/year).
    pub fn saturation(&self) -> f64 {
        self.capacity * f64::from(self.servers) * self.service_rate
    }

    /// Per-queue service capacity `s * mu` (patients/hour).
    fn queue_rate_cap(&self) -> f64 {
        f64::from(self.servers) * self.service_rate
    }

    /// Per-queue expected queueing delay (hours) at per-queue arrival rate
    /// `x_q` in `[0, s*mu)`.
    fn per_queue_wait(&self, x_q: f64) -> f64 {
        match self.kind {
            QueueKind::MM1 => x_q / (self.service_rate * (self.service_rate - x_q)),
            QueueKind::MMs => {
                let s = f64::from(self.servers);
                let mu = self.service_rate;
                let a = x_q / mu;
                erlang_c(self.servers, a) / (s * mu - x_q)
            }
        }
    }

    /// Expected level wait (hours) at annual flow `flow`.
    ///
    /// Negative flows use the linear extension `w0 + flow/capacity`; flows at
    /// or beyond saturation are an error because the queue is unstable there.
    pub fn wait(&self, flow: f64) -> Result<f64, SaturationError> {
        let x_q = flow / self.capacity;
        if flow < 0.0 {
            return Ok(self.zero_flow_wait + x_q);
        }
        if x_q >= self.queue_rate_cap() {
            return Err(SaturationError {
                flow,
                saturation: self.saturation(),
            });
        }
        Ok(self.zero_flow_wait + self.multiplier * self.per_queue_wait(x_q))
    }

    /// The unique annual flow whose expected wait is `w`; total on the reals
    /// thanks to the linear extension below `zero_flow_wait`.
    ///
    /// The single-server case inverts in closed form,
    /// `x_q = mu^2 * v / (1 + mu * v)` with `v = (w - w0)/m`; the multi-server
    /// case bisects the strictly increasing wait to float resolution.
    pub fn inverse_wait(&self, w: f64) -> f64 {
        assert!(w.is_finite(), "wait must be finite");
        let w0 = self.zero_flow_wait;
        if w <= w0 {
            return self.capacity * (w - w0);
        }
        match self.kind {
            QueueKind::MM1 => {
                let v = (w - w0) / self.multiplier;
                let mu = self.service_rate;
                let x_q = mu * mu * v / (1.0 + mu * v);
                x_q * self.capacity
            }
            QueueKind::MMs => {
                let cap = self.queue_rate_cap();
                let mut lo = 0.0f64;
                let mut hi = cap * (1.0 - 1e-15);
                // wait() is strictly increasing on [0, cap), so plain
                // bisection converges unconditionally. It runs to float
                // resolution because an interval tolerance on the flow would
                // leave a wait residual of slope x interval, which blows up
                // near saturation where the slope diverges.
                loop {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let wm = self.zero_flow_wait + self.multiplier * self.per_queue_wait(mid);
                    if wm < w {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi) * self.capacity
            }
        }
    }

    /// Derivative of [`Self::inverse_wait`] with respect to the wait
    /// (annual flow per hour); strictly positive everywhere.
    pub fn inverse_wait_derivative(&self, w: f64) -> f64 {
        let w0 = self.zero_flow_wait;
        if w <= w0 {
            return self.capacity;
        }
        match self.kind {
            QueueKind::MM1 => {
                let mu = self.service_rate;
                let v = (w - w0) / self.multiplier;
                let denom = 1.0 + mu * v;
                self.capacity * mu * mu / (self.multiplier * denom * denom)
            }
            QueueKind::MMs => {
                // No closed form; a central difference of the bisection
                // inverse is accurate far beyond what the line-searched
                // minimizer needs from its curvature model.
                let h = 1e-6 * w.abs().max(1.0);
                let lo = if w - h > w0 { w - h } else { w0 };
                (self.inverse_wait(w + h) - self.inverse_wait(lo)) / (w + h - lo)
            }
        }
    }

    /// Integral of the inverse delay from the zero-flow wait to `w`
    /// (annual-flow x hours units): convex, nonnegative, and minimized (at 0)
    /// at `w = zero_flow_wait`.
    ///
    /// The single-server case integrates symbolically, per queue
    /// `mu*v - m*ln(1 + mu*v/m)` with `v = w - w0`. The multi-server case
    /// integrates by parts, `int x dw = x_q(w)*(w - w0) - m * int Wq(t) dt`
    /// per queue, so the quadrature runs over the cheap closed-form delay
    /// rather than over the bisection inverse; adaptive Simpson to absolute
    /// tolerance 1e-10 (per queue, before the capacity scaling). Below `w0`
    /// the linear extension integrates to `capacity * (w - w0)^2 / 2`.
    pub fn h_integral(&self, w: f64) -> f64 {
        assert!(w.is_finite(), "wait must be finite");
        let w0 = self.zero_flow_wait;
        if w <= w0 {
            return self.capacity * (w - w0) * (w - w0) / 2.0;
        }
        match self.kind {
            QueueKind::MM1 => {
                let mu = self.service_rate;
                let m = self.multiplier;
                let v = w - w0;
                self.capacity * (mu * v - m * (mu * v / m).ln_1p())
            }
            QueueKind::MMs => {
                let x_q = self.inverse_wait(w) / self.capacity;
                let delay = |t: f64| self.per_queue_wait(t);
                let area = adaptive_simpson(&delay, 0.0, x_q, 1e-10, 40);
                self.capacity * (x_q * (w - w0) - self.multiplier * area)
            }
        }
    }
}

/// Erlang-C probability that an arrival to an M/M/s queue with offered load
/// `a = lambda/mu < s` must wait, via the Erlang-B recursion
/// `B_k = a*B_{k-1} / (k + a*B_{k-1})`, which is stable for all loads.
fn erlang_c(servers: u32, a: f64) -> f64 {
    let s = f64::from(servers);
    debug_assert!(a >= 0.0 && a < s);
    let mut b = 1.0f64;
    for k in 1..=servers {
        b = a * b / (f64::from(k) + a * b);
    }
    let rho = a / s;
    b / (1.0 - rho + rho * b)
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    // The argument list carries the interval state of the recursion; a
    // bundling struct would only obscure the textbook scheme.
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mm1(service_rate: f64, multiplier: f64, capacity: f64, w0: f64) -> DelayModel {
        DelayModel {
            kind: QueueKind::MM1,
            service_rate,
            servers: 1,
            multiplier,
            capacity,
            hours_per_year: 2088.0,
            zero_flow_wait: w0,
        }
    }

    fn mms(service_rate: f64, servers: u32, multiplier: f64, capacity: f64, w0: f64) -> DelayModel {
        DelayModel {
            kind: QueueKind::MMs,
            service_rate,
            servers,
            multiplier,
            capacity,
            hours_per_year: 2088.0,
            zero_flow_wait: w0,
        }
    }

    #[test]
    fn mm1_wait_textbook_value() {
        // Per-queue rate 5/hour at service rate 10/hour: Wq = 5/(10*5) = 0.1 h.
        let d = mm1(10.0, 1.0, 1.0, 0.0);
        assert_abs_diff_eq!(d.wait(5.0).unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn mm1_wait_matches_tertiary_reference_point() {
        // Per-queue rate 10.306/hour, mu = 12, m = 7 reproduces the 3.55 h
        // calibration target of the tertiary level.
        let d = mm1(12.0, 7.0, 1.0, 0.0);
        let x = 12.0f64 * 12.0 * 3.55 / (7.0 + 12.0 * 3.55);
        assert_abs_diff_eq!(x, 10.306451612903226, epsilon = 1e-12);
        assert_abs_diff_eq!(d.wait(x).unwrap(), 3.55, epsilon = 1e-12);
    }

    #[test]
    fn saturated_flow_is_an_error() {
        let d = mm1(10.0, 1.0, 2.0, 0.0);
        let err = d.wait(20.0).unwrap_err();
        assert_eq!(err.saturation, 20.0);
        assert!(d.wait(25.0).is_err());
        assert!(d.wait(19.999).is_ok());
    }

    #[test]
    fn wait_diverges_approaching_saturation() {
        let d = mm1(10.0, 1.0, 1.0, 0.0);
        let mut last = 0.0;
        for frac in [0.9, 0.99, 0.999, 0.999999] {
            let w = d.wait(10.0 * frac).unwrap();
            assert!(w > last);
            last = w;
        }
        assert!(last > 1e5 * d.wait(9.0).unwrap());
    }

    #[test]
    fn negative_flow_extends_linearly_and_continuously() {
        let d = mm1(10.0, 3.0, 4.0, 0.5);
        assert_abs_diff_eq!(d.wait(-4.0).unwrap(), 0.5 - 1.0, epsilon = 1e-15);
        // Continuity at zero flow from both sides.
        let below = d.wait(-1e-9).unwrap();
        let above = d.wait(1e-9).unwrap();
        assert_abs_diff_eq!(below, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(above, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn mms_with_one_server_equals_mm1() {
        let a = mm1(10.0, 3.0, 7.0, 0.2);
        let b = mms(10.0, 1, 3.0, 7.0, 0.2);
        for flow in [0.0, 1.0, 12.3, 50.0, 69.9] {
            let wa = a.wait(flow).unwrap();
            let wb = b.wait(flow).unwrap();
            assert!(
                (wa - wb).abs() <= 1e-12 * wa.abs().max(1.0),
                "flow {flow}: {wa} vs {wb}"
            );
        }
    }

    #[test]
    fn erlang_c_matches_direct_sum() {
        // Direct formula: C = (a^s/s!) * s/(s-a) / (sum_{k<s} a^k/k! + (a^s/s!) * s/(s-a)).
        for (s, a) in [(2u32, 1.3f64), (3, 2.9), (5, 2.0), (8, 7.5)] {
            let mut term = 1.0;
            let mut partial = 0.0;
            for k in 0..s {
                partial += term;
                term *= a / f64::from(k + 1);
            }
            let sf = f64::from(s);
            let tail = term * sf / (sf - a);
            let direct = tail / (partial + tail);
            assert_abs_diff_eq!(erlang_c(s, a), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn mm1_discrete_event_simulation_confirms_wait() {
        // Lindley recursion for the FIFO M/M/1 waiting time:
        // W_{n+1} = max(0, W_n + S_n - A_{n+1}).
        let mu = 10.0f64;
        let lambda = 6.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut exp = |rate: f64| -> f64 {
            let u: f64 = rng.random::<f64>();
            -(1.0 - u).ln() / rate
        };
        let customers = 400_000;
        let warmup = 20_000;
        let mut w = 0.0f64;
        let mut sum = 0.0f64;
        for n in 0..customers {
            let service = exp(mu);
            let interarrival = exp(lambda);
            w = (w + service - interarrival).max(0.0);
            if n >= warmup {
                sum += w;
            }
        }
        let simulated = sum / (customers - warmup) as f64;
        let d = mm1(mu, 1.0, 1.0, 0.0);
        let formula = d.wait(lambda).unwrap();
        assert!(
            (simulated - formula).abs() / formula < 0.03,
            "simulated {simulated} vs formula {formula}"
        );
    }

    #[test]
    fn inverse_wait_examples() {
        // Primary-level reference point: 3x/(10(10-x)) = 0.4333... gives
        // x = 100*0.4333/(3+4.333) = 5.909/hour.
        let d = mm1(10.0, 3.0, 1.0, 0.0);
        let w = 26.0 / 60.0;
        assert_abs_diff_eq!(d.inverse_wait(w), 5.909090909090909, epsilon = 1e-12);
        // Zero wait maps to zero flow when the offset is zero.
        assert_eq!(d.inverse_wait(0.0), 0.0);
        let ds = mms(10.0, 3, 2.0, 1.0, 0.0);
        assert_eq!(ds.inverse_wait(0.0), 0.0);
    }

    #[test]
    fn wait_inverse_round_trip_on_grid() {
        let models = [
            mm1(10.0, 3.0, 5.0, 0.0),
            mm1(12.0, 7.0, 2.0, 0.3),
            mms(10.0, 3, 5.0, 4.0, 0.0),
            mms(4.0, 2, 1.5, 10.0, 0.8),
        ];
        for d in &models {
            let mut w = 0.01;
            while w <= 10.0 {
                let x = d.inverse_wait(w);
                let back = d.wait(x).unwrap();
                assert!(
                    (back - w).abs() <= 1e-10 * w.max(1.0),
                    "round trip at w={w}: {back}"
                );
                w += 0.17;
            }
        }
    }

    #[test]
    fn h_integral_closed_form_example() {
        // mu=10, m=1, capacity=1, w=0.1: 10*0.1 - ln(2) = 0.3068528...
        let d = mm1(10.0, 1.0, 1.0, 0.0);
        assert_abs_diff_eq!(d.h_integral(0.1), 0.3068528194400547, epsilon = 1e-12);
        assert_eq!(d.h_integral(0.0), 0.0);
    }

    #[test]
    fn h_integral_at_offset_is_zero_and_minimal() {
        let d = mm1(10.0, 2.0, 3.0, 0.4);
        assert_eq!(d.h_integral(0.4), 0.0);
        assert!(d.h_integral(0.3) > 0.0);
        assert!(d.h_integral(0.5) > 0.0);
    }

    #[test]
    fn h_integral_derivative_is_inverse_wait() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let models = [
            mm1(10.0, 3.0, 5.0, 0.0),
            mm1(12.0, 7.0, 2.0, 0.3),
            mms(10.0, 3, 5.0, 4.0, 0.1),
        ];
        for _ in 0..50 {
            let d = &models[rng.random_range(0..3)];
            let w: f64 = rng.random_range(0.05..6.0);
            let h = 1e-5;
            let fd = (d.h_integral(w + h) - d.h_integral(w - h)) / (2.0 * h);
            let exact = d.inverse_wait(w);
            assert!(
                (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
                "at w={w}: fd {fd} vs inverse {exact}"
            );
        }
    }

    #[test]
    fn mms_h_integral_agrees_with_mm1_closed_form_at_one_server() {
        let a = mm1(10.0, 3.0, 7.0, 0.2);
        let b = mms(10.0, 1, 3.0, 7.0, 0.2);
        for w in [0.3, 0.9, 2.5, 8.0] {
            let ha = a.h_integral(w);
            let hb = b.h_integral(w);
            assert!(
                (ha - hb).abs() <= 1e-8 * ha.abs().max(1.0),
                "H at {w}: {ha} vs {hb}"
            );
        }
    }

    #[test]
    fn inverse_wait_derivative_matches_finite_differences() {
        let models = [mm1(10.0, 3.0, 5.0, 0.25), mms(6.0, 4, 2.0, 3.0, 0.1)];
        for d in &models {
            for w in [0.05, 0.5, 1.7, 4.0] {
                let h = 1e-6;
                let fd = (d.inverse_wait(w + h) - d.inverse_wait(w - h)) / (2.0 * h);
                let got = d.inverse_wait_derivative(w);
                assert!(
                    (fd - got).abs() <= 1e-4 * fd.abs().max(1.0),
                    "w={w}: derivative {got} vs fd {fd}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn wait_is_strictly_increasing(
            mu in 1.0f64..20.0,
            m in 1.0f64..8.0,
            cap in 0.5f64..50.0,
            w0 in 0.0f64..0.5,
            servers in 1u32..4,
            f1 in -0.5f64..0.99,
            f2 in -0.5f64..0.99,
        ) {
            let d = mms(mu, servers, m, cap, w0);
            let sat = d.saturation();
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            prop_assume!(hi - lo > 1e-6);
            let w_lo = d.wait(lo * sat).unwrap();
            let w_hi = d.wait(hi * sat).unwrap();
            prop_assert!(w_hi > w_lo);
        }

        #[test]
        fn inverse_round_trip_randomized(
            mu in 1.0f64..20.0,
            m in 1.0f64..8.0,
            cap in 0.5f64..50.0,
            w0 in 0.0f64..0.5,
            servers in 1u32..4,
            w_extra in 1e-4f64..10.0,
        ) {
            let d = mms(mu, servers, m, cap, w0);
            let w = w0 + w_extra;
            let x = d.inverse_wait(w);
            let back = d.wait(x).unwrap();
            prop_assert!((back - w).abs() <= 1e-9 * w.max(1.0));
        }

        #[test]
        fn h_is_midpoint_convex(
            mu in 1.0f64..20.0,
            m in 1.0f64..8.0,
            cap in 0.5f64..50.0,
            w0 in 0.0f64..0.5,
            servers in 1u32..4,
            wa in -1.0f64..10.0,
            wb in -1.0f64..10.0,
        ) {
            let d = mms(mu, servers, m, cap, w0);
            let mid = 0.5 * (wa + wb);
            let lhs = d.h_integral(mid);
            let rhs = 0.5 * d.h_integral(wa) + 0.5 * d.h_integral(wb);
            prop_assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0));
        }
    }
}
