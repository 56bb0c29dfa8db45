pub mod ctp;
pub mod error;
pub mod inference;
pub mod io;
pub mod linmodel;
pub mod numeric;
pub mod qr;
pub mod simlab;
pub mod special;
