use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `n` joint observations of `(X, Y, Z)`, one sample per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataTriplet {
    x: Matrix,
    y: Matrix,
    z: Matrix,
}

/// `(d_x, d_y, d_z)`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.z)
    }
}

impl std::str::FromStr for Dims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("dims must look like `3,3,3`, got `{s}`")))?;
        match parts[..] {
            [x, y, z] if x > 0 && y > 0 && z > 0 => Ok(Dims::new(x, y, z)),
            _ => Err(Error::Config(format!("dims must be three positive counts, got `{s}`"))),
        }
    }
}

impl DataTriplet {
    pub fn new(x: Matrix, y: Matrix, z: Matrix) -> Result<Self> {
        if x.rows() != y.rows() || x.rows() != z.rows() {
            return Err(Error::Data(format!(
                "row counts differ: X {}, Y {}, Z {}",
                x.rows(),
                y.rows(),
                z.rows()
            )));
        }
        if x.cols() == 0 || y.cols() == 0 || z.cols() == 0 {
            return Err(Error::Data(format!(
                "every block needs at least one column, got {}/{}/{}",
                x.cols(),
                y.cols(),
                z.cols()
            )));
        }
        Ok(Self { x, y, z })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.x.cols(), self.y.cols(), self.z.cols())
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn select_rows(&self, idx: &[usize]) -> DataTriplet {
        DataTriplet {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            z: self.z.select_rows(idx),
        }
    }
}
