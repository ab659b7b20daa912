use crate::parallel;

/// Block-diagonal 1×1 convolution over `rows` positions.
///
/// `x` is `rows × (groups·ci)`, `w` is `groups × ci × co` and `bias` has
/// `groups·co` entries. Each output channel accumulates its group's inputs in
/// ascending order starting from zero, then adds the bias.
pub fn grouped_matmul(
    x: &[f64],
    rows: usize,
    groups: usize,
    ci: usize,
    co: usize,
    w: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let cin = groups * ci;
    let cout = groups * co;
    debug_assert_eq!(x.len(), rows * cin);
    debug_assert_eq!(w.len(), groups * ci * co);
    debug_assert_eq!(bias.len(), cout);
    let mut out = vec![0.0; rows * cout];
    parallel::for_each_row_mut(&mut out, cout, |r, orow| {
        let xrow = &x[r * cin..(r + 1) * cin];
        for j in 0..groups {
            let xs = &xrow[j * ci..(j + 1) * ci];
            let wj = &w[j * ci * co..(j + 1) * ci * co];
            let os = &mut orow[j * co..(j + 1) * co];
            for (i, &xi) in xs.iter().enumerate() {
                let wrow = &wj[i * co..(i + 1) * co];
                for (o, &wv) in os.iter_mut().zip(wrow) {
                    *o += xi * wv;
                }
            }
        }
        for (o, &b) in orow.iter_mut().zip(bias) {
            *o += b;
        }
    });
    out
}

/// Gradients of [`grouped_matmul`]: returns `(dx, dw, dbias)`.
#[allow(clippy::too_many_arguments)]
pub fn grouped_matmul_backward(
    x: &[f64],
    rows: usize,
    groups: usize,
    ci: usize,
    co: usize,
    w: &[f64],
    dy: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let cin = groups * ci;
    let cout = groups * co;
    let dx = need_dx.then(|| {
        // Per-group transpose to `co × ci` so the inner loop is an axpy.
        let mut wt = vec![0.0; w.len()];
        for j in 0..groups {
            let base = j * ci * co;
            for i in 0..ci {
                for o in 0..co {
                    wt[base + o * ci + i] = w[base + i * co + o];
                }
            }
        }
        let mut dx = vec![0.0; rows * cin];
        parallel::for_each_row_mut(&mut dx, cin, |r, dxrow| {
            let dyrow = &dy[r * cout..(r + 1) * cout];
            for j in 0..groups {
                let dys = &dyrow[j * co..(j + 1) * co];
                let wtj = &wt[j * ci * co..(j + 1) * ci * co];
                let dxs = &mut dxrow[j * ci..(j + 1) * ci];
                for (o, &g) in dys.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (d, &wv) in dxs.iter_mut().zip(&wtj[o * ci..(o + 1) * ci]) {
                        *d += g * wv;
                    }
                }
            }
        });
        dx
    });
    let wlen = groups * ci * co;
    let both = parallel::chunked_sum(rows, wlen + cout, |s, e, acc| {
        let (dw, db) = acc.split_at_mut(wlen);
        for r in s..e {
            let xrow = &x[r * cin..(r + 1) * cin];
            let dyrow = &dy[r * cout..(r + 1) * cout];
            for j in 0..groups {
                let dys = &dyrow[j * co..(j + 1) * co];
                let dwj = &mut dw[j * ci * co..(j + 1) * ci * co];
                for i in 0..ci {
                    let xi = xrow[j * ci + i];
                    if xi == 0.0 {
                        continue;
                    }
                    for (d, &g) in dwj[i * co..(i + 1) * co].iter_mut().zip(dys) {
                        *d += xi * g;
                    }
                }
            }
            for (d, &g) in db.iter_mut().zip(dyrow) {
                *d += g;
            }
        }
    });
    let (dw, db) = both.split_at(wlen);
    (dx, dw.to_vec(), db.to_vec())
}

/// Destination channel of input channel `c` under a `groups`-way shuffle of
/// `channels` channels: view as `groups × n`, transpose to `n × groups`.
#[inline]
pub(crate) fn shuffle_target(c: usize, channels: usize, groups: usize) -> usize {
    let n = channels / groups;
    (c % n) * groups + c / n
}
