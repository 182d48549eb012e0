//! Log-gamma and digamma for the variational updates.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln |Γ(x)|`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x) Γ(1 - x) = π / sin(πx)
        (PI / (PI * x).sin().abs()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + LANCZOS_G + 0.5;
        let series = LANCZOS[1..]
            .iter()
            .enumerate()
            .fold(LANCZOS[0], |acc, (i, c)| acc + c / (x + (i + 1) as f64));
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
    }
}

/// Digamma `ψ(x) = d/dx ln Γ(x)`.
pub fn digamma(mut x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        return f64::NAN;
    }
    if x < 0.5 {
        return digamma(1.0 - x) - PI / (PI * x).tan();
    }
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Bernoulli tail: -Σ B_2k / (2k x^2k)
    let tail = inv2
        * (-1.0 / 12.0
            + inv2
                * (1.0 / 120.0
                    + inv2
                        * (-1.0 / 252.0
                            + inv2 * (1.0 / 240.0 + inv2 * (-1.0 / 132.0 + inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 / x + tail
}

/// `ln B(a, b)` for the Beta function.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    // Reference values from 50-digit evaluations.
    #[test]
    fn ln_gamma_reference() {
        let cases = [
            (0.5, 0.572_364_942_924_700_087_07),
            (1.0, 0.0),
            (2.0, 0.0),
            (3.7, 1.428_072_326_665_388_129_2),
            (10.0, 12.801_827_480_081_469_611),
            (0.1, 2.252_712_651_734_205_902_0),
            (123.45, 469.576_676_300_381_914_8),
            (1e-3, 6.907_178_885_383_853_661_7),
        ];
        for (x, want) in cases {
            let got = ln_gamma(x);
            if want == 0.0 {
                assert!(got.abs() < 1e-14, "ln_gamma({x}) = {got}");
            } else {
                assert!(rel(got, want) < 1e-12, "ln_gamma({x}) = {got}, want {want}");
            }
        }
    }

    #[test]
    fn digamma_reference() {
        let cases = [
            (1.0, -0.577_215_664_901_532_860_6),
            (0.5, -1.963_510_026_021_423_479_4),
            (10.0, 2.251_752_589_066_721_107_6),
            (2.5, 0.703_156_640_645_243_187_2),
            (0.01, -100.560_885_457_868_672_4),
            (37.2, 3.602_807_686_506_357_592_8),
            (1e4, 9.210_290_371_142_849_403_6),
        ];
        for (x, want) in cases {
            let got = digamma(x);
            assert!(rel(got, want) < 1e-12, "digamma({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn digamma_recurrence() {
        for &x in &[0.3, 1.7, 4.2, 11.5, 250.0] {
            let lhs = digamma(x + 1.0) - digamma(x);
            assert!(rel(lhs, 1.0 / x) < 1e-12);
        }
    }

    #[test]
    fn ln_beta_symmetric() {
        assert!((ln_beta(2.0, 3.0) - (1.0_f64 / 12.0).ln()).abs() < 1e-13);
        assert_eq!(ln_beta(1.5, 4.25), ln_beta(4.25, 1.5));
    }
}
