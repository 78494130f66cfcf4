#![allow(dead_code)]

pub mod contracts;
pub mod gradcheck;
pub mod grids;
