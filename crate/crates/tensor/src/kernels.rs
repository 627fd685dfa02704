//! Raw row-major kernels shared by forward and backward passes.

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (cv, bv) in ci.iter_mut().zip(bp) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            c[i * n + j] += ai.iter().zip(bj).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let cp = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in cp.iter_mut().zip(bi) {
                *cv += av * bv;
            }
        }
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)` element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (i, o) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        *o = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], i: usize) -> usize {
    if i < shape.len() {
        shape[shape.len() - 1 - i]
    } else {
        1
    }
}

/// How an operand of shape `inp` is addressed when broadcast to `out`.
pub(crate) enum BroadcastMap {
    Same,
    /// Operand repeats every `n` output elements (trailing-suffix broadcast).
    Tile(usize),
    /// Each operand element covers `n` consecutive output elements.
    Expand(usize),
    General(Vec<usize>),
}

impl BroadcastMap {
    pub(crate) fn new(out: &[usize], inp: &[usize]) -> Self {
        let out_n: usize = out.iter().product();
        let in_n: usize = inp.iter().product();
        if out_n == in_n {
            return BroadcastMap::Same;
        }
        let rank = out.len();
        let padded: Vec<usize> = (0..rank)
            .map(|i| dim_from_right(inp, rank - 1 - i))
            .collect();
        // Leading ones then an exact suffix.
        let first = padded.iter().position(|&d| d != 1).unwrap_or(rank);
        if padded[first..] == out[first..] {
            return BroadcastMap::Tile(in_n);
        }
        // Exact prefix then trailing ones.
        let last = padded.iter().rposition(|&d| d != 1).map_or(0, |p| p + 1);
        if padded[..last] == out[..last] {
            return BroadcastMap::Expand(out_n / in_n);
        }
        let mut strides = vec![0; rank];
        let mut s = 1;
        for i in (0..rank).rev() {
            strides[i] = if padded[i] == 1 { 0 } else { s };
            s *= padded[i];
        }
        let mut offsets = Vec::with_capacity(out_n);
        let mut idx = vec![0; rank];
        let mut off = 0usize;
        for _ in 0..out_n {
            offsets.push(off);
            for d in (0..rank).rev() {
                idx[d] += 1;
                off += strides[d];
                if idx[d] < out[d] {
                    break;
                }
                off -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        BroadcastMap::General(offsets)
    }

    #[inline]
    pub(crate) fn offset(&self, i: usize) -> usize {
        match self {
            BroadcastMap::Same => i,
            BroadcastMap::Tile(n) => i % n,
            BroadcastMap::Expand(n) => i / n,
            BroadcastMap::General(o) => o[i],
        }
    }
}

/// Offsets into the source for each element of the permuted output.
pub(crate) fn permute_offsets(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut src_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let n: usize = shape.iter().product();
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 4]), Some(vec![2, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn broadcast_map_matches_general() {
        // [2,3,4] <- [3,1] needs the general path
        let map = BroadcastMap::new(&[2, 3, 4], &[3, 1]);
        assert!(matches!(map, BroadcastMap::General(_)));
        assert_eq!(map.offset(0), 0);
        assert_eq!(map.offset(5), 1);
        assert_eq!(map.offset(12), 0);
        let tile = BroadcastMap::new(&[2, 3], &[1, 3]);
        assert_eq!(tile.offset(4), 1);
        let expand = BroadcastMap::new(&[2, 3, 4], &[2, 3, 1]);
        assert_eq!(expand.offset(9), 2);
    }

    #[test]
    fn permute_transposes() {
        // [[0,1,2],[3,4,5]] -> [[0,3],[1,4],[2,5]]
        assert_eq!(permute_offsets(&[2, 3], &[1, 0]), vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn gemm_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 2.0, 1.0, 0.0, 3.0]; // 3x2
        let mut c = [0.0; 4];
        gemm_nn(&mut c, &a, &b, 2, 3, 2);
        assert_eq!(c, [5.0, 11.0, 14.0, 23.0]);
        let bt = [1.0, 2.0, 0.0, 0.0, 1.0, 3.0]; // b transposed, 2x3
        let mut c2 = [0.0; 4];
        gemm_nt(&mut c2, &a, &bt, 2, 3, 2);
        assert_eq!(c, c2);
        // aᵀ·a : 3x3
        let mut c3 = [0.0; 9];
        gemm_tn(&mut c3, &a, &a, 2, 3, 3);
        assert_eq!(c3[0], 17.0);
        assert_eq!(c3[4], 29.0);
    }
}
