pub mod conv;
pub mod deform;
pub mod resize;
pub mod shuffle;
