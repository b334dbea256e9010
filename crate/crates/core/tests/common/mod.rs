#![allow(dead_code)]

pub mod motion;
pub mod oracle;
