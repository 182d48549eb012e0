//! Product-form basis inverse: `B⁻¹ = E_k ⋯ E_1` with sparse eta columns.

const DROP_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
struct Eta {
    row: usize,
    pivot: f64,
    /// Off-pivot entries of the transformed entering column.
    entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct EtaFile {
    etas: Vec<Eta>,
    nnz: usize,
}

impl EtaFile {
    pub fn clear(&mut self) {
        self.etas.clear();
        self.nnz = 0;
    }

    pub fn len(&self) -> usize {
        self.etas.len()
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    /// Appends the eta for a pivot on `row` of the already-transformed column.
    pub fn push(&mut self, row: usize, column: &[f64]) {
        let entries: Vec<(usize, f64)> = column
            .iter()
            .enumerate()
            .filter(|&(i, v)| i != row && v.abs() > DROP_TOL)
            .map(|(i, &v)| (i, v))
            .collect();
        self.nnz += entries.len() + 1;
        self.etas.push(Eta {
            row,
            pivot: column[row],
            entries,
        });
    }

    /// Appends an eta given its off-pivot entries directly.
    pub fn push_entries(&mut self, row: usize, pivot: f64, entries: Vec<(usize, f64)>) {
        self.nnz += entries.len() + 1;
        self.etas.push(Eta { row, pivot, entries });
    }

    /// `(row, pivot, entries)` of the `k`-th eta.
    pub fn get(&self, k: usize) -> (usize, f64, &[(usize, f64)]) {
        let e = &self.etas[k];
        (e.row, e.pivot, &e.entries)
    }

    /// `v ← B⁻¹ v`
    pub fn ftran(&self, v: &mut [f64]) {
        for e in &self.etas {
            let vr = v[e.row];
            if vr == 0.0 {
                continue;
            }
            let t = vr / e.pivot;
            v[e.row] = t;
            for &(i, a) in &e.entries {
                v[i] -= a * t;
            }
        }
    }

    /// `yᵀ ← yᵀ B⁻¹`
    pub fn btran(&self, y: &mut [f64]) {
        for e in self.etas.iter().rev() {
            let mut s = y[e.row];
            for &(i, a) in &e.entries {
                s -= a * y[i];
            }
            y[e.row] = s / e.pivot;
        }
    }
}
