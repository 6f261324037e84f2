use super::ldsa::check_context;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Embeds `T×c` local weights into a `T×T` banded matrix:
/// `full[t][t + j − ⌊c/2⌋] = local[t][j]` wherever the target is in range,
/// zero everywhere else.
pub fn band_expand(local: &Matrix, len: usize, c: usize) -> Result<Matrix> {
    check_context(c)?;
    if local.shape() != (len, c) {
        return Err(Error::shape("band_expand", local.shape(), (len, c)));
    }
    let half = c as isize / 2;
    let mut full = Matrix::zeros(len, len);
    for t in 0..len {
        for j in 0..c {
            let s = t as isize + j as isize - half;
            if s >= 0 && (s as usize) < len {
                full.set(t, s as usize, local.get(t, j));
            }
        }
    }
    Ok(full)
}
