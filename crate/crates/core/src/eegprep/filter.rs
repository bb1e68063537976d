//! IIR filter design and zero-phase application in second-order sections.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad `[b0, b1, b2, a1, a2]` with `a0 = 1`, run in transposed
/// direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Filter state that makes a unit step input look like it has been
    /// running forever.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        [y - self.b[0], self.b[2] - self.a[1] * y]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }

    /// Complex frequency response magnitude at `f` Hz.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * c1 + self.b[2] * c2,
            self.b[1] * s1 + self.b[2] * s2,
        );
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }
}

/// A cascade of biquads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    pub fn extend(&mut self, other: Sos) {
        self.sections.extend(other.sections);
    }

    fn initial_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let z = s.step_state();
                let out = [z[0] * scale, z[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], x0: f64, states: &[[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(states) {
            s.run(x, [z[0] * x0, z[1] * x0]);
        }
    }

    /// Forward-backward filtering with odd-extension padding and steady-state
    /// initial conditions, so the result has zero phase.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 || self.sections.is_empty() {
            return x.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let states = self.initial_states();
        let x0 = ext[0];
        self.run(&mut ext, x0, &states);
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, y0, &states);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude(f, fs)).product()
    }
}

/// Butterworth high-pass of the given order via the bilinear transform with
/// frequency prewarping.
pub fn butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::InvalidParameter("filter order must be positive".into()));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "high-pass cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            fs / 2.0
        )));
    }
    let k = 2.0 * fs;
    let wc = k * (PI * cutoff_hz / fs).tan();
    // Bilinear map of an analog high-pass pole wc / p.
    let digital = |re: f64, im: f64| {
        // s = wc / (re + i im)
        let d = re * re + im * im;
        let (sr, si) = (wc * re / d, -wc * im / d);
        // z = (k + s) / (k - s)
        let (nr, ni) = (k + sr, si);
        let (dr, di) = (k - sr, -si);
        let dd = dr * dr + di * di;
        ((nr * dr + ni * di) / dd, (ni * dr - nr * di) / dd)
    };
    let mut sections = Vec::new();
    for j in 0..order / 2 {
        let theta = PI * (2 * j + order + 1) as f64 / (2 * order) as f64;
        let (zr, zi) = digital(theta.cos(), theta.sin());
        let a1 = -2.0 * zr;
        let a2 = zr * zr + zi * zi;
        let g = (1.0 - a1 + a2) / 4.0;
        sections.push(Biquad {
            b: [g, -2.0 * g, g],
            a: [a1, a2],
        });
    }
    if order % 2 == 1 {
        let (zr, _) = digital(-1.0, 0.0);
        let g = (1.0 + zr) / 2.0;
        sections.push(Biquad {
            b: [g, -g, 0.0],
            a: [-zr, 0.0],
        });
    }
    Ok(Sos { sections })
}

/// Second-order IIR notch at `f0` with quality factor `q`.
pub fn iir_notch(f0: f64, q: f64, fs: f64) -> Result<Biquad> {
    if !(f0 > 0.0 && f0 < fs / 2.0) || !(q > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "notch at {f0} Hz (Q={q}) invalid for fs={fs}"
        )));
    }
    let w0 = 2.0 * PI * f0 / fs;
    let bw = w0 / q;
    let beta = (bw / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    Ok(Biquad {
        b: [gain, -2.0 * gain * w0.cos(), gain],
        a: [-2.0 * gain * w0.cos(), 2.0 * gain - 1.0],
    })
}

/// All multiples of `base_hz` strictly below Nyquist.
pub fn harmonics_below_nyquist(base_hz: f64, fs: f64) -> Result<Vec<f64>> {
    if !(base_hz > 0.0 && base_hz < fs / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "notch base {base_hz} Hz outside (0, {}) Hz",
            fs / 2.0
        )));
    }
    Ok((1..)
        .map(|k| k as f64 * base_hz)
        .take_while(|&f| f < fs / 2.0)
        .collect())
}
