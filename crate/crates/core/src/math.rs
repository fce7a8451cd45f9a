//! `f64` transcendental functions that resolve the same way with and without `std`.

use num_traits::Float;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    Float::sqrt(x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    Float::exp(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    Float::ln(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    Float::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    Float::cos(x)
}
#[inline]
pub fn tan(x: f64) -> f64 {
    Float::tan(x)
}
#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    Float::atan2(y, x)
}
#[inline]
pub fn acos(x: f64) -> f64 {
    Float::acos(x)
}
#[inline]
pub fn round(x: f64) -> f64 {
    Float::round(x)
}
#[inline]
pub fn floor(x: f64) -> f64 {
    Float::floor(x)
}
#[inline]
pub fn ceil(x: f64) -> f64 {
    Float::ceil(x)
}
#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    Float::hypot(x, y)
}
#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    Float::powi(x, n)
}
