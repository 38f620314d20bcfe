#![allow(dead_code)]

pub mod random_plants;
pub mod sdp_cases;
pub mod three_tank;
