use clap::Parser;
use pathbellman::cli::{main_with, Args};

fn main() {
    std::process::exit(main_with(Args::parse()));
}
