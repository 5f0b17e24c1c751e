use super::Tensor;
use crate::error::{Error, Result};

/// A complex tensor stored as two real tensors of equal shape, so that every
/// complex operation decomposes into differentiable real ones.
#[derive(Clone, Debug)]
pub struct ComplexPair {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexPair {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::Shape {
                op: "complex",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        Ok(Self { re, im })
    }

    pub fn from_real(re: Tensor) -> Self {
        let im = Tensor::zeros(re.shape());
        Self { re, im }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn add(&self, other: &ComplexPair) -> Result<ComplexPair> {
        Ok(Self {
            re: self.re.add(&other.re)?,
            im: self.im.add(&other.im)?,
        })
    }

    pub fn sub(&self, other: &ComplexPair) -> Result<ComplexPair> {
        Ok(Self {
            re: self.re.sub(&other.re)?,
            im: self.im.sub(&other.im)?,
        })
    }

    /// (a + ib)(c + id) = (ac − bd) + i(ad + bc)
    pub fn mul(&self, other: &ComplexPair) -> Result<ComplexPair> {
        let re = self.re.mul(&other.re)?.sub(&self.im.mul(&other.im)?)?;
        let im = self.re.mul(&other.im)?.add(&self.im.mul(&other.re)?)?;
        Ok(Self { re, im })
    }

    pub fn mul_real(&self, r: &Tensor) -> Result<ComplexPair> {
        Ok(Self {
            re: self.re.mul(r)?,
            im: self.im.mul(r)?,
        })
    }

    /// a/b = a·conj(b)/|b|²
    pub fn div(&self, other: &ComplexPair) -> Result<ComplexPair> {
        let den = other.abs_sq()?;
        let num = self.mul(&other.conj())?;
        Ok(Self {
            re: num.re.div(&den)?,
            im: num.im.div(&den)?,
        })
    }

    pub fn conj(&self) -> ComplexPair {
        Self {
            re: self.re.clone(),
            im: self.im.neg(),
        }
    }

    pub fn abs_sq(&self) -> Result<Tensor> {
        self.re.square().add(&self.im.square())
    }

    /// e^(a+ib) = e^a (cos b + i sin b)
    pub fn exp(&self) -> Result<ComplexPair> {
        let mag = self.re.exp();
        Ok(Self {
            re: mag.mul(&self.im.cos())?,
            im: mag.mul(&self.im.sin())?,
        })
    }

    pub fn add_real_scalar(&self, c: f64) -> ComplexPair {
        Self {
            re: self.re.add_scalar(c),
            im: self.im.clone(),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<ComplexPair> {
        Ok(Self {
            re: self.re.reshape(shape)?,
            im: self.im.reshape(shape)?,
        })
    }

    pub fn value(&self, i: usize) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.re.data()[i], self.im.data()[i])
    }
}
