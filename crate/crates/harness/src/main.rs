fn main() {
    std::process::exit(sched_harness::cli::run(std::env::args_os()));
}
