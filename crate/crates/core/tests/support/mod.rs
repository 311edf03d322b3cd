#![allow(dead_code)]

pub mod gradient;
pub mod reference;
