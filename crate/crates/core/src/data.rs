//! Dataset containers and their CSV formats.
//!
//! Two dataset shapes exist: derivative pairs (x, xdot) for the differential
//! form and timestamped trajectories for the recurrent form. States are
//! stored raw (unnormalized); training code normalizes through the model's
//! `Normalizer`.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use std::io::{BufRead, Write};

/// Derivative pairs, one sample per row.
#[derive(Clone, Debug)]
pub struct DiffDataset {
    pub states: Matrix,
    pub derivs: Matrix,
}

impl DiffDataset {
    pub fn new(states: Matrix, derivs: Matrix) -> Result<Self> {
        if states.shape() != derivs.shape() {
            return Err(CoreError::DimensionMismatch(format!(
                "states {:?} vs derivatives {:?}",
                states.shape(),
                derivs.shape()
            )));
        }
        if !states.is_finite() || !derivs.is_finite() {
            return Err(CoreError::NonFinite("derivative dataset".into()));
        }
        Ok(DiffDataset { states, derivs })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.cols()
    }

    /// Row subset in the given order.
    pub fn select(&self, idx: &[usize]) -> DiffDataset {
        DiffDataset {
            states: select_rows(&self.states, idx),
            derivs: select_rows(&self.derivs, idx),
        }
    }
}

/// One sampled trajectory with strictly increasing timestamps.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Matrix,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Matrix) -> Result<Self> {
        if times.len() != states.rows() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} timestamps vs {} state rows",
                times.len(),
                states.rows()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::Data("timestamps must strictly increase".into()));
        }
        if !states.is_finite() || times.iter().any(|t| !t.is_finite()) {
            return Err(CoreError::NonFinite("trajectory".into()));
        }
        Ok(Trajectory { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The constant sampling interval, if the grid is uniform to relative
    /// tolerance 1e-9.
    pub fn uniform_dt(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let dt = self.times[1] - self.times[0];
        for w in self.times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return None;
            }
        }
        Some(dt)
    }
}

/// Trajectories grouped by id.
#[derive(Clone, Debug, Default)]
pub struct TrajDataset {
    pub trajectories: Vec<Trajectory>,
}

impl TrajDataset {
    pub fn state_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.states.cols())
    }

    pub fn total_snapshots(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// All states stacked into one snapshot matrix.
    pub fn stack_states(&self) -> Matrix {
        let n = self.state_dim();
        let mut out = Matrix::zeros(self.total_snapshots(), n);
        let mut r = 0;
        for traj in &self.trajectories {
            for i in 0..traj.len() {
                for j in 0..n {
                    out.set(r, j, traj.states.get(i, j));
                }
                r += 1;
            }
        }
        out
    }

    /// Hankelized windows over every trajectory.
    pub fn windows(&self, window_len: usize, stride: usize) -> Result<Vec<Window>> {
        let mut out = Vec::new();
        for traj in &self.trajectories {
            out.extend(hankelize(traj, window_len, stride)?);
        }
        Ok(out)
    }
}

/// A recurrent-form training window; times are re-based so `times[0] == 0`.
#[derive(Clone, Debug)]
pub struct Window {
    pub times: Vec<f64>,
    pub states: Matrix,
}

impl Window {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Constant grid spacing if uniform to relative tolerance 1e-9.
    pub fn uniform_dt(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let dt = self.times[1] - self.times[0];
        for w in self.times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return None;
            }
        }
        Some(dt)
    }
}

/// Slice one trajectory into fixed-length windows starting every `stride`
/// samples.
pub fn hankelize(traj: &Trajectory, window_len: usize, stride: usize) -> Result<Vec<Window>> {
    if window_len < 2 {
        return Err(CoreError::Data("window length must be at least 2".into()));
    }
    if stride < 1 {
        return Err(CoreError::Data("stride must be at least 1".into()));
    }
    if traj.len() < window_len {
        return Err(CoreError::Data(format!(
            "trajectory of length {} is shorter than window length {}",
            traj.len(),
            window_len
        )));
    }
    let n = traj.states.cols();
    let mut out = Vec::new();
    let mut start = 0;
    while start + window_len <= traj.len() {
        let t0 = traj.times[start];
        let times: Vec<f64> = (start..start + window_len)
            .map(|i| traj.times[i] - t0)
            .collect();
        let states = Matrix::from_fn(window_len, n, |i, j| traj.states.get(start + i, j));
        out.push(Window { times, states });
        start += stride;
    }
    Ok(out)
}

fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), m.cols(), |i, j| m.get(idx[i], j))
}

fn parse_field(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CoreError::Format(format!("line {line}: cannot parse number {s:?}")))
}

/// Derivative CSV: header `x_1,..,x_N,xdot_1,..,xdot_N`, one sample per row.
pub fn write_derivative_csv(w: &mut impl Write, data: &DiffDataset) -> Result<()> {
    let n = data.state_dim();
    let mut header = Vec::with_capacity(2 * n);
    for j in 1..=n {
        header.push(format!("x_{j}"));
    }
    for j in 1..=n {
        header.push(format!("xdot_{j}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.len() {
        let mut fields = Vec::with_capacity(2 * n);
        for j in 0..n {
            fields.push(data.states.get(i, j).to_string());
        }
        for j in 0..n {
            fields.push(data.derivs.get(i, j).to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_derivative_csv(r: impl BufRead) -> Result<DiffDataset> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Format("empty derivative CSV".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() % 2 != 0 || cols.is_empty() {
        return Err(CoreError::Format(format!(
            "derivative CSV needs 2N columns, got {}",
            cols.len()
        )));
    }
    let n = cols.len() / 2;
    for j in 0..n {
        if cols[j] != format!("x_{}", j + 1) || cols[n + j] != format!("xdot_{}", j + 1) {
            return Err(CoreError::Format(format!(
                "unexpected derivative CSV header column {:?}",
                cols[j.min(n + j)]
            )));
        }
    }
    let mut states = Vec::new();
    let mut derivs = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 * n {
            return Err(CoreError::Format(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                2 * n,
                fields.len()
            )));
        }
        for j in 0..n {
            states.push(parse_field(fields[j], lineno + 2)?);
        }
        for j in 0..n {
            derivs.push(parse_field(fields[n + j], lineno + 2)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CoreError::Format("derivative CSV has no data rows".into()));
    }
    DiffDataset::new(
        Matrix::from_vec(rows, n, states),
        Matrix::from_vec(rows, n, derivs),
    )
}

/// Trajectory CSV: header `traj_id,t,x_1,..,x_N`; rows grouped by id with
/// ascending time.
pub fn write_trajectory_csv(w: &mut impl Write, data: &TrajDataset) -> Result<()> {
    let n = data.state_dim();
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    for j in 1..=n {
        header.push(format!("x_{j}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for (id, traj) in data.trajectories.iter().enumerate() {
        for i in 0..traj.len() {
            let mut fields = vec![id.to_string(), traj.times[i].to_string()];
            for j in 0..n {
                fields.push(traj.states.get(i, j).to_string());
            }
            writeln!(w, "{}", fields.join(","))?;
        }
    }
    Ok(())
}

pub fn read_trajectory_csv(r: impl BufRead) -> Result<TrajDataset> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Format("empty trajectory CSV".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "traj_id" || cols[1] != "t" {
        return Err(CoreError::Format(
            "trajectory CSV header must start with traj_id,t".into(),
        ));
    }
    let n = cols.len() - 2;
    for j in 0..n {
        if cols[2 + j] != format!("x_{}", j + 1) {
            return Err(CoreError::Format(format!(
                "unexpected trajectory CSV header column {:?}",
                cols[2 + j]
            )));
        }
    }
    // ids are grouped in order of first appearance
    let mut order: Vec<String> = Vec::new();
    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + n {
            return Err(CoreError::Format(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                2 + n,
                fields.len()
            )));
        }
        let id = fields[0].trim().to_string();
        let gi = match order.iter().position(|x| *x == id) {
            Some(gi) => gi,
            None => {
                order.push(id);
                groups.push((Vec::new(), Vec::new()));
                order.len() - 1
            }
        };
        groups[gi].0.push(parse_field(fields[1], lineno + 2)?);
        for j in 0..n {
            groups[gi].1.push(parse_field(fields[2 + j], lineno + 2)?);
        }
    }
    if groups.is_empty() {
        return Err(CoreError::Format("trajectory CSV has no data rows".into()));
    }
    let mut trajectories = Vec::with_capacity(groups.len());
    for (times, flat) in groups {
        let rows = times.len();
        trajectories.push(Trajectory::new(times, Matrix::from_vec(rows, n, flat))?);
    }
    Ok(TrajDataset { trajectories })
}

/// Snapshot CSV for POD input: one snapshot per row, no header.
pub fn write_snapshot_csv(w: &mut impl Write, snapshots: &Matrix) -> Result<()> {
    for i in 0..snapshots.rows() {
        let fields: Vec<String> = (0..snapshots.cols())
            .map(|j| snapshots.get(i, j).to_string())
            .collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_snapshot_csv(r: impl BufRead) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut width = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(fields.len()),
            Some(wd) if wd != fields.len() => {
                return Err(CoreError::Format(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 1,
                    wd,
                    fields.len()
                )));
            }
            _ => {}
        }
        for f in fields {
            data.push(parse_field(f, lineno + 1)?);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| CoreError::Format("empty snapshot CSV".into()))?;
    Ok(Matrix::from_vec(rows, width, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_traj(len: usize, dt: f64) -> Trajectory {
        let times: Vec<f64> = (0..len).map(|i| 1.0 + i as f64 * dt).collect();
        let states = Matrix::from_fn(len, 2, |i, j| (i * 2 + j) as f64);
        Trajectory::new(times, states).unwrap()
    }

    #[test]
    fn hankelize_counts_and_rebasing() {
        let traj = toy_traj(5, 0.5);
        let w = hankelize(&traj, 5, 1).unwrap();
        assert_eq!(w.len(), 1);

        let traj = toy_traj(6, 0.5);
        let w = hankelize(&traj, 3, 3).unwrap();
        assert_eq!(w.len(), 2);
        for win in &w {
            assert_eq!(win.times[0], 0.0);
            assert_eq!(win.len(), 3);
        }
        assert_eq!(w[1].states.get(0, 0), traj.states.get(3, 0));
    }

    #[test]
    fn hankelize_rejects_short_trajectory() {
        let traj = toy_traj(3, 0.1);
        assert!(hankelize(&traj, 4, 1).is_err());
    }

    #[test]
    fn uniform_dt_detection() {
        let traj = toy_traj(4, 0.25);
        assert!((traj.uniform_dt().unwrap() - 0.25).abs() < 1e-12);
        let t = Trajectory::new(
            vec![0.0, 0.1, 0.3],
            Matrix::zeros(3, 1),
        )
        .unwrap();
        assert!(t.uniform_dt().is_none());
    }

    #[test]
    fn trajectory_rejects_non_increasing_times() {
        assert!(Trajectory::new(vec![0.0, 0.0], Matrix::zeros(2, 1)).is_err());
        assert!(Trajectory::new(vec![0.0, -0.1], Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn derivative_csv_round_trip() {
        let data = DiffDataset::new(
            Matrix::from_rows(&[vec![0.1, -0.25], vec![1.5, 0.0]]),
            Matrix::from_rows(&[vec![-0.005, 0.26], vec![0.125, -3.0]]),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_derivative_csv(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,xdot_1,xdot_2\n"));
        let back = read_derivative_csv(&buf[..]).unwrap();
        assert_eq!(back.states.data(), data.states.data());
        assert_eq!(back.derivs.data(), data.derivs.data());
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let ds = TrajDataset {
            trajectories: vec![toy_traj(3, 0.5), toy_traj(2, 1.0)],
        };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &ds).unwrap();
        let back = read_trajectory_csv(&buf[..]).unwrap();
        assert_eq!(back.trajectories.len(), 2);
        assert_eq!(back.trajectories[0].times, ds.trajectories[0].times);
        assert_eq!(
            back.trajectories[1].states.data(),
            ds.trajectories[1].states.data()
        );
    }

    #[test]
    fn snapshot_csv_round_trip_headerless() {
        let snaps = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-0.5, 0.25, 0.125]]);
        let mut buf = Vec::new();
        write_snapshot_csv(&mut buf, &snaps).unwrap();
        let back = read_snapshot_csv(&buf[..]).unwrap();
        assert_eq!(back.data(), snaps.data());
    }

    #[test]
    fn csv_rejects_malformed_rows() {
        let text = "x_1,xdot_1\n1.0\n";
        assert!(read_derivative_csv(text.as_bytes()).is_err());
        let text = "x_1,xdot_1\n1.0,abc\n";
        assert!(read_derivative_csv(text.as_bytes()).is_err());
        let text = "traj_id,t,x_1\n0,0.0,1.0\n0,0.0,2.0\n";
        assert!(read_trajectory_csv(text.as_bytes()).is_err());
    }
}
