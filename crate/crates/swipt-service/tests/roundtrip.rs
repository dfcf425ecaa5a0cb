use std::net::SocketAddr;
use swipt_client::{Client, ClientError};
use swipt_runner::{run_solve, Job, SweepRequest};

fn serve() -> SocketAddr {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || rt.block_on(async { axum::serve(listener, swipt_service::router()).await }));
    addr
}

const SMALL: &str = "num_aps = 8\nnum_ues = 4\nnum_groups = 2\n";

#[test]
fn remote_calls_match_local_runs() {
    let client = Client::new(&format!("http://{}", serve())).unwrap();
    assert!(client.health().unwrap());

    let job = Job::new(SMALL).with_seed(2);
    let remote = client.solve(&job).unwrap();
    let local = run_solve(&job).unwrap();
    assert_eq!(remote.exit_code(), local.exit_code());
    let (r, l) = (remote.output.unwrap().report.ee, local.output.unwrap().report.ee);
    assert!((r - l).abs() <= 1e-12 * l);

    let feas = client.feasible(&job).unwrap();
    assert_eq!(feas.exit_code(), 0);

    let req = SweepRequest { job, axis: "r_u".into(), values: vec![0.3], seeds: vec![0] };
    assert_eq!(client.sweep(&req).unwrap().rows.len(), 1);
}

#[test]
fn remote_errors_carry_the_local_exit_code() {
    let client = Client::new(&format!("http://{}", serve())).unwrap();
    let req = SweepRequest { job: Job::new(SMALL), axis: "warp".into(), values: vec![1.0], seeds: vec![0] };
    match client.sweep(&req) {
        Err(e @ ClientError::Remote { status: 422, .. }) => assert_eq!(e.exit_code(), 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unreachable_service_is_an_http_error() {
    let client = Client::new("http://127.0.0.1:9").unwrap();
    assert!(matches!(client.health(), Err(ClientError::Http(_))));
}
