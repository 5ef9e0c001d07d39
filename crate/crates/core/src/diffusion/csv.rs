//! Per-step trajectory export.

use std::io::Write;

use super::TrajectorySample;
use crate::clbf::{Certificate, CertificateConfig};
use crate::dynamics::SystemSpec;
use crate::error::Result;

/// One row of a trajectory table. Controls, Lie derivative and hinge are NaN
/// on the terminal row, where no control is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: f64,
    pub lie: f64,
    /// `[L_fV + λV]⁺`.
    pub hinge: f64,
}

pub fn trajectory_rows(
    sys: &SystemSpec,
    cert: &dyn Certificate,
    ccfg: &CertificateConfig,
    sample: &TrajectorySample,
) -> Vec<TrajectoryRow> {
    let mut rows = Vec::with_capacity(sample.horizon() + 1);
    let mut f = vec![0.0; sys.n()];
    for (t, x) in sample.all_states().enumerate() {
        match sample.controls().get(t) {
            Some(u) => {
                sys.model.eval(sample.time(t), x, u, &mut f);
                let (v, lie) = cert.value_and_directional_at(x, &f);
                let arg = lie + ccfg.lambda * v;
                rows.push(TrajectoryRow {
                    t,
                    x: x.0.clone(),
                    u: u.0.clone(),
                    v,
                    lie,
                    hinge: if arg > 0.0 { arg } else { 0.0 },
                });
            }
            None => rows.push(TrajectoryRow {
                t,
                x: x.0.clone(),
                u: vec![f64::NAN; sys.m()],
                v: cert.value_at(x),
                lie: f64::NAN,
                hinge: f64::NAN,
            }),
        }
    }
    rows
}

/// Writes `t,x0..,u0..,V,lie,violation_hinge` with 17 significant digits.
pub fn write_trajectory_csv(out: &mut impl Write, n: usize, m: usize, rows: &[TrajectoryRow]) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|j| format!("u{j}")));
    header.extend(["V", "lie", "violation_hinge"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let mut line = r.t.to_string();
        for v in r.x.iter().chain(&r.u).chain([&r.v, &r.lie, &r.hinge]) {
            line.push(',');
            line.push_str(&format!("{v:.16e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clbf::MlpCertificate;
    use crate::dynamics::{ControlVector, IntegratorConfig, StateVector};

    #[test]
    fn csv_layout() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let cert = MlpCertificate::init(&[2, 4, 1], 0).unwrap();
        let s = TrajectorySample::from_controls(
            &sys,
            StateVector(vec![0.1, 0.0]),
            0.0,
            vec![ControlVector(vec![1.0]); 3],
            &IntegratorConfig::default(),
        )
        .unwrap();
        let rows = trajectory_rows(&sys, &cert, &CertificateConfig::default(), &s);
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, 2, 1, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x0,x1,u0,V,lie,violation_hinge");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,1.0000000000000001e-1,"));
        assert!(lines[4].ends_with(",NaN,NaN"));
        let back: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(back, s.states()[0][0]);
    }
}
