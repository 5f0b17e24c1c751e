// NumPy-style broadcasting: shapes are right-aligned and each axis must
// either match or have extent 1.

pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat offset into a tensor of
/// `in_shape` broadcast against it.
pub(crate) fn offsets(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..in_shape.len()).rev() {
        strides[i + pad] = if in_shape[i] == 1 { 0 } else { s };
        s *= in_shape[i];
    }
    let n: usize = out_shape.iter().product();
    let mut result = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        result.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    result
}

/// Maps flat output indices to input offsets without materializing them for
/// the common layouts.
#[derive(Clone, Debug)]
pub(crate) enum Indexer {
    Same,
    Scalar,
    /// Input repeats every `len` outputs (a trailing block of the shape).
    Cycle(usize),
    /// Each input element covers `inner` consecutive outputs.
    Spread(usize),
    Table(Vec<usize>),
}

impl Indexer {
    pub(crate) fn new(in_shape: &[usize], out_shape: &[usize]) -> Indexer {
        let n_in: usize = in_shape.iter().product();
        let n_out: usize = out_shape.iter().product();
        if n_in == n_out {
            return Indexer::Same;
        }
        if n_in == 1 {
            return Indexer::Scalar;
        }
        let pad = out_shape.len() - in_shape.len();
        let padded: Vec<usize> = std::iter::repeat(1).take(pad).chain(in_shape.iter().copied()).collect();
        // first and last axes where the input has real extent
        let first = padded.iter().position(|&d| d != 1).expect("n_in > 1");
        let last = padded.iter().rposition(|&d| d != 1).expect("n_in > 1");
        let dense = (first..=last).all(|i| padded[i] == out_shape[i]);
        if dense && padded[last + 1..].iter().all(|&d| d == 1) {
            let inner: usize = out_shape[last + 1..].iter().product();
            if inner == 1 {
                return Indexer::Cycle(n_in);
            }
            if first == 0 || out_shape[..first].iter().product::<usize>() == 1 {
                return Indexer::Spread(inner);
            }
        }
        Indexer::Table(offsets(in_shape, out_shape))
    }

    /// Input offsets for output indices `0..n`, in order.
    pub(crate) fn table(&self, n: usize) -> Vec<usize> {
        match self {
            Indexer::Same => (0..n).collect(),
            Indexer::Scalar => vec![0; n],
            Indexer::Cycle(len) => {
                let mut t = Vec::with_capacity(n);
                while t.len() < n {
                    t.extend(0..*len);
                }
                t
            }
            Indexer::Spread(inner) => {
                let mut t = Vec::with_capacity(n);
                for i in 0..n / inner {
                    t.extend(std::iter::repeat(i).take(*inner));
                }
                t
            }
            Indexer::Table(t) => t.clone(),
        }
    }
}

/// Sums a gradient laid out as `out_shape` back down to `in_shape`.
pub(crate) fn reduce_to(grad: &[f64], in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    reduce_with(grad, in_shape.iter().product(), &Indexer::new(in_shape, out_shape))
}

pub(crate) fn reduce_with(grad: &[f64], n_in: usize, idx: &Indexer) -> Vec<f64> {
    match idx {
        Indexer::Same => grad.to_vec(),
        Indexer::Scalar => vec![grad.iter().sum()],
        Indexer::Cycle(len) => {
            let mut acc = vec![0.0; n_in];
            for chunk in grad.chunks(*len) {
                for (a, g) in acc.iter_mut().zip(chunk) {
                    *a += g;
                }
            }
            acc
        }
        Indexer::Spread(inner) => grad.chunks(*inner).map(|c| c.iter().sum()).collect(),
        Indexer::Table(t) => {
            let mut acc = vec![0.0; n_in];
            for (g, &off) in grad.iter().zip(t) {
                acc[off] += g;
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(broadcast_shapes(&[3, 1], &[4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shapes(&[1], &[2, 5]), Some(vec![2, 5]));
        assert_eq!(broadcast_shapes(&[2, 3], &[3, 2]), None);
        assert_eq!(broadcast_shapes(&[], &[2]), Some(vec![2]));
    }

    #[test]
    fn row_and_column_offsets() {
        assert_eq!(offsets(&[3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(offsets(&[2, 1], &[2, 3]), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn reduce_sums_broadcast_axes() {
        let g = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(reduce_to(&g, &[3], &[2, 3]), vec![5.0, 7.0, 9.0]);
        assert_eq!(reduce_to(&g, &[2, 1], &[2, 3]), vec![6.0, 15.0]);
        assert_eq!(reduce_to(&g, &[1], &[2, 3]), vec![21.0]);
    }

    #[test]
    fn indexer_agrees_with_offset_table() {
        let cases: [(&[usize], &[usize]); 7] = [
            (&[3], &[2, 3]),
            (&[2, 1], &[2, 3]),
            (&[1], &[2, 3]),
            (&[4, 1, 3], &[4, 2, 3]),
            (&[4, 2, 1], &[4, 2, 3]),
            (&[2, 3], &[4, 2, 3]),
            (&[1, 2, 1], &[4, 2, 3]),
        ];
        for (inp, out) in cases {
            let table = offsets(inp, out);
            let idx = Indexer::new(inp, out);
            assert_eq!(idx.table(table.len()), table, "{inp:?} -> {out:?}");
            let g: Vec<f64> = (0..table.len()).map(|i| i as f64).collect();
            let n_in: usize = inp.iter().product();
            assert_eq!(reduce_with(&g, n_in, &idx), reduce_with(&g, n_in, &Indexer::Table(table)));
        }
    }
}
