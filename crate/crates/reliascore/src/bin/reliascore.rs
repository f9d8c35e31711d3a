fn main() { std::process::exit(reliascore::cli::main()) }
