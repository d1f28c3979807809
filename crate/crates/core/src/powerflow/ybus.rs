use num_complex::Complex64;

use crate::grid::GridGraph;

/// Complex bus admittance matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<Complex64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of row `i` as `(column, value)`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, y)| y * v[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut out = vec![vec![Complex64::new(0.0, 0.0); self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, y) in self.row(i) {
                row[j] = y;
            }
        }
        out
    }
}

/// Series admittance `1 / (r + jx)` of a branch.
pub(crate) fn series_admittance(r: f64, x: f64) -> Complex64 {
    Complex64::new(r, x).inv()
}

/// Assembles the bus admittance matrix from branch series impedances.
/// Branches are tap-free and there are no shunts.
pub fn build_ybus(grid: &GridGraph) -> AdmittanceMatrix {
    let n = grid.n_buses();
    let mut triplets: Vec<(usize, usize, Complex64)> = Vec::with_capacity(4 * grid.n_branches());
    for br in grid.branches() {
        let y = series_admittance(br.r, br.x);
        triplets.push((br.from, br.from, y));
        triplets.push((br.to, br.to, y));
        triplets.push((br.from, br.to, -y));
        triplets.push((br.to, br.from, -y));
    }
    triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut row_ptr = vec![0; n + 1];
    let mut cols = Vec::new();
    let mut values: Vec<Complex64> = Vec::new();
    let mut last: Option<(usize, usize)> = None;
    for (i, j, y) in triplets {
        if last == Some((i, j)) {
            *values.last_mut().unwrap() += y;
        } else {
            cols.push(j);
            values.push(y);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
    }
    for i in 0..n {
        row_ptr[i + 1] += row_ptr[i];
    }
    AdmittanceMatrix {
        n,
        row_ptr,
        cols,
        values,
    }
}
