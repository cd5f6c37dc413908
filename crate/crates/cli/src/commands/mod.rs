pub mod audit;
pub mod bench;
pub mod correct;
pub mod offline;
pub mod report;
pub mod simulate;
