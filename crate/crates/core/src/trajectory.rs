use std::io::{self, BufRead, Write};

use nalgebra::DVector;

use crate::error::{ClqError, Result};

/// Sampled state/control pairs with terminal diagnostics.
///
/// `controls[j]` is the control applied at `times[j]`. Closed-loop
/// trajectories carry the steering correction's value at the final sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// `|X(T) - y|` after the final segment.
    pub terminal_miss: f64,
    /// `|X(T - eps_T) - y|` before the steering correction; zero for
    /// trajectories without a standoff.
    pub standoff_gap: f64,
    /// `J_0, J_1, ..., J_k`.
    pub functionals: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    /// Writes `s,x_1..x_n,u_1..u_m` rows followed by `#`-prefixed metadata.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut header = vec!["s".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for ((s, x), u) in self.times.iter().zip(&self.states).zip(&self.controls) {
            let row: Vec<String> = std::iter::once(*s)
                .chain(x.iter().copied())
                .chain(u.iter().copied())
                .map(|v| v.to_string())
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        writeln!(w, "# terminal_miss={}", self.terminal_miss)?;
        writeln!(w, "# standoff_gap={}", self.standoff_gap)?;
        for (i, j) in self.functionals.iter().enumerate() {
            writeln!(w, "# J_{i}={j}")?;
        }
        Ok(())
    }

    /// Inverse of [`Trajectory::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: String| ClqError::Parse(format!("trajectory csv: {msg}"));
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        let n = cols.iter().filter(|c| c.starts_with("x_")).count();
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let mut traj = Trajectory {
            times: vec![],
            states: vec![],
            controls: vec![],
            terminal_miss: 0.0,
            standoff_gap: 0.0,
            functionals: vec![],
        };
        for line in lines {
            let line = line?;
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, value) = meta.split_once('=').ok_or_else(|| bad(line.clone()))?;
                let value: f64 = value.parse().map_err(|_| bad(line.clone()))?;
                match key {
                    "terminal_miss" => traj.terminal_miss = value,
                    "standoff_gap" => traj.standoff_gap = value,
                    _ if key.starts_with("J_") => traj.functionals.push(value),
                    _ => return Err(bad(format!("unknown metadata {key}"))),
                }
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(line.clone()))?;
            if vals.len() != 1 + n + m {
                return Err(bad(format!("expected {} columns: {line}", 1 + n + m)));
            }
            traj.times.push(vals[0]);
            traj.states.push(DVector::from_column_slice(&vals[1..1 + n]));
            traj.controls.push(DVector::from_column_slice(&vals[1 + n..]));
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let traj = Trajectory {
            times: vec![0.0, 0.1, 0.30000000000000004],
            states: vec![
                DVector::from_vec(vec![1.0, -2.5]),
                DVector::from_vec(vec![1.0 / 3.0, 1e-300]),
                DVector::from_vec(vec![0.0, 7.0]),
            ],
            controls: vec![
                DVector::from_vec(vec![0.5]),
                DVector::from_vec(vec![-std::f64::consts::PI]),
                DVector::from_vec(vec![2.0]),
            ],
            terminal_miss: 1.25e-12,
            standoff_gap: 3e-3,
            functionals: vec![2.313035285499331, 0.1],
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("s,x_1,x_2,u_1\n"));
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back, traj);
    }
}
