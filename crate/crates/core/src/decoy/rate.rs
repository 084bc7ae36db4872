use crate::error::{Error, Result};

/// Binary Shannon entropy in bits, with `H(0) = H(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::param(format!(
            "binary entropy argument {x} outside [0, 1]"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Probability that both senders emit exactly one photon given both chose
/// mean photon number `mu`: `mu² e^{-2 mu}`.
pub fn p11(mu: f64) -> Result<f64> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::param(format!(
            "mean photon number {mu} must be finite and >= 0"
        )));
    }
    Ok(mu * mu * (-2.0 * mu).exp())
}

/// Inputs of the secure key rate formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateInputs {
    /// Fraction of slots where both send signal states in Z.
    pub q: f64,
    pub p11: f64,
    pub y11_z_lower: f64,
    pub e11_x_upper: f64,
    /// Q^Z of the signal-signal cell.
    pub gain_signal: f64,
    /// E^Z of the signal-signal cell.
    pub qber_signal: f64,
    /// Error-correction inefficiency f >= 1.
    pub ec_inefficiency: f64,
    pub total_pulses: u64,
}

impl KeyRateInputs {
    /// Values listed for the 10 km reference run.
    pub fn reference_run() -> Self {
        Self {
            q: 0.011,
            p11: 0.0494,
            y11_z_lower: 4.1e-4,
            e11_x_upper: 0.151,
            gain_signal: 4.66e-5,
            qber_signal: 0.0178,
            ec_inefficiency: 1.16,
            total_pulses: 169_000_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateReport {
    pub q: f64,
    pub p11: f64,
    pub y11_z_lower: f64,
    pub e11_x_upper: f64,
    pub gain_signal: f64,
    pub qber_signal: f64,
    pub ec_inefficiency: f64,
    /// Secret bits per pulse slot, clamped at 0.
    pub rate: f64,
    /// `floor(rate * total_pulses)`.
    pub key_length: u64,
    pub total_pulses: u64,
}

fn check_prob(v: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::param(format!("{name} = {v} outside [0, 1]")))
    }
}

/// `R = max(0, q { p11 Y11 [1 - H(e11)] - Q f H(E) })` and `L = floor(R N)`.
///
/// Error rates above 1/2 enter the entropy as 1/2: an upper bound above
/// 1/2 carries no more information than 1/2 itself.
pub fn key_rate(inputs: &KeyRateInputs) -> Result<KeyRateReport> {
    let KeyRateInputs {
        q,
        p11,
        y11_z_lower,
        e11_x_upper,
        gain_signal,
        qber_signal,
        ec_inefficiency,
        total_pulses,
    } = *inputs;
    check_prob(q, "q")?;
    check_prob(p11, "p11")?;
    check_prob(y11_z_lower, "Y11 lower bound")?;
    check_prob(e11_x_upper, "e11 upper bound")?;
    check_prob(gain_signal, "signal gain")?;
    check_prob(qber_signal, "signal QBER")?;
    if !(ec_inefficiency.is_finite() && ec_inefficiency >= 1.0) {
        return Err(Error::param(format!(
            "error-correction inefficiency {ec_inefficiency} must be >= 1"
        )));
    }
    let h_e11 = binary_entropy(e11_x_upper.min(0.5))?;
    let h_e = binary_entropy(qber_signal.min(0.5))?;
    let raw = q * (p11 * y11_z_lower * (1.0 - h_e11) - gain_signal * ec_inefficiency * h_e);
    let rate = raw.max(0.0);
    let key_length = (rate * total_pulses as f64).floor() as u64;
    Ok(KeyRateReport {
        q,
        p11,
        y11_z_lower,
        e11_x_upper,
        gain_signal,
        qber_signal,
        ec_inefficiency,
        rate,
        key_length,
        total_pulses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // -0.151 log2 0.151 - 0.849 log2 0.849 at 50 digits: 0.61233715774747...
        assert_relative_eq!(
            binary_entropy(0.151).unwrap(),
            0.6123371577474704,
            max_relative = 1e-14
        );
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn entropy_is_symmetric(x in 0.0f64..=1.0) {
            prop_assert!((binary_entropy(x).unwrap() - binary_entropy(1.0 - x).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn entropy_is_concave(x in 0.0f64..=1.0, y in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let mid = binary_entropy(t * x + (1.0 - t) * y).unwrap();
            let chord = t * binary_entropy(x).unwrap() + (1.0 - t) * binary_entropy(y).unwrap();
            prop_assert!(mid >= chord - 1e-12);
        }
    }

    #[test]
    fn p11_examples() {
        assert_relative_eq!(
            p11(0.3).unwrap(),
            0.09 * (-0.6f64).exp(),
            max_relative = 1e-15
        );
        assert!((p11(0.3).unwrap() - 0.0494).abs() < 5e-5);
        assert_eq!(p11(0.0).unwrap(), 0.0);
        assert_relative_eq!(p11(1.0).unwrap(), 0.1353352832366127, max_relative = 1e-15);
        assert!(p11(-0.1).is_err());
    }

    #[test]
    fn reference_run_rate_and_length() {
        let r = key_rate(&KeyRateInputs::reference_run()).unwrap();
        // Evaluated independently at double precision.
        assert_relative_eq!(r.rate, 9.72100432552103e-9, max_relative = 1e-12);
        assert_eq!(r.key_length, 1642);
        assert!((9.3e-9..=10.3e-9).contains(&r.rate));
    }

    #[test]
    fn zero_yield_clamps_to_zero() {
        let inputs = KeyRateInputs {
            y11_z_lower: 0.0,
            ..KeyRateInputs::reference_run()
        };
        let r = key_rate(&inputs).unwrap();
        assert_eq!(r.rate, 0.0);
        assert_eq!(r.key_length, 0);
    }

    #[test]
    fn domain_errors() {
        let bad_f = KeyRateInputs {
            ec_inefficiency: 0.9,
            ..KeyRateInputs::reference_run()
        };
        assert!(key_rate(&bad_f).is_err());
        let bad_q = KeyRateInputs {
            q: 1.5,
            ..KeyRateInputs::reference_run()
        };
        assert!(key_rate(&bad_q).is_err());
    }

    #[test]
    fn monotone_in_each_input() {
        let base = KeyRateInputs {
            q: 0.05,
            p11: 0.1,
            y11_z_lower: 0.02,
            gain_signal: 1e-4,
            ..KeyRateInputs::reference_run()
        };
        let rate = |f: &dyn Fn(&mut KeyRateInputs)| {
            let mut i = base;
            f(&mut i);
            key_rate(&i).unwrap().rate
        };
        let h = 1e-4;
        for k in 0..60 {
            let e = 0.005 * k as f64;
            assert!(rate(&|i| i.e11_x_upper = e + h) <= rate(&|i| i.e11_x_upper = e));
            assert!(rate(&|i| i.qber_signal = e + h) <= rate(&|i| i.qber_signal = e));
            let y = 0.001 * (k + 1) as f64;
            assert!(rate(&|i| i.y11_z_lower = y + h) >= rate(&|i| i.y11_z_lower = y));
        }
    }
}
