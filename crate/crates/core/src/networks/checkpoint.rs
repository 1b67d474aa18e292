use std::fs;
use std::path::Path;

use crate::atsr;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Scalar;

/// Write one ATSR file per parameter into `dir`, named after the parameter.
pub fn save_params<T: Scalar>(dir: impl AsRef<Path>, params: &ParamSet<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (name, t) in params.iter() {
        atsr::write(dir.join(format!("{name}.atsr")), t)?;
    }
    Ok(())
}

/// Read every parameter of `params` back from `dir`. Missing files and shape
/// changes are errors; the set is left untouched unless all reads succeed.
pub fn load_params<T: Scalar>(dir: impl AsRef<Path>, params: &mut ParamSet<T>) -> Result<()> {
    let dir = dir.as_ref();
    let mut loaded = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let v = atsr::read_as::<T>(dir.join(format!("{name}.atsr")))?;
        if v.shape() != t.shape() {
            return Err(Error::Format(format!(
                "{name}: checkpoint shape {:?} does not match {:?}",
                v.shape(),
                t.shape()
            )));
        }
        loaded.push(v);
    }
    for (i, v) in loaded.into_iter().enumerate() {
        params.replace(i, v)?;
    }
    Ok(())
}
