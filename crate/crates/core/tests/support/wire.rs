//! Wire fixtures and message generators shared by protocol tests.
#![allow(dead_code)]

use std::path::PathBuf;

use manytask_core::proto::*;
use proptest::prelude::*;

pub const FIXTURE_COUNT: usize = 19;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn id(b: [u8; 16]) -> TaskId {
    TaskId(b)
}

pub const ID1: [u8; 16] = [0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99, 0xaa, 0xbb, 0xcc, 0xdd, 0xee, 0xff];

pub fn seq(start: u8) -> [u8; 16] {
    std::array::from_fn(|i| start + i as u8)
}

pub fn expected(name: &str) -> WireMessage {
    let spec1 = TaskSpec::new(id(ID1), "/bin/sleep 0");
    match name {
        "heartbeat_empty" => WireMessage::new(7, Body::Heartbeat { running: vec![] }),
        "heartbeat_running" => WireMessage::new(9, Body::Heartbeat { running: vec![id(seq(0)), id(seq(0xf0))] }),
        "register_push" => WireMessage::new(
            0x0102030405060708,
            Body::Register { cores: 4, mode: DispatchMode::Push, prefetch: 0 },
        ),
        "register_pull_prefetch" => {
            WireMessage::new(3, Body::Register { cores: 16, mode: DispatchMode::Pull, prefetch: 1 })
        }
        "dispatch_sleep0" => WireMessage::new(0, Body::TaskDispatch(spec1)),
        "bundle_with_io" => {
            let a = TaskSpec {
                id: id(seq(0)),
                command: b"dock6 -i in.mol2".to_vec(),
                payload: b"\x00\xffhi".to_vec(),
                inputs: vec![
                    InputRef { name: "exe".into(), source: "/shared/bin/dock6".into(), cacheable: true },
                    InputRef { name: "in.mol2".into(), source: "/shared/lig/1.mol2".into(), cacheable: false },
                ],
                outputs: vec![OutputRef { name: "out".into(), dest: "/shared/out/1.txt".into() }],
            };
            WireMessage::new(0, Body::TaskBundle(vec![a, TaskSpec::new(id(seq(0xf0)), "true")]))
        }
        "result_ok" => WireMessage::new(
            42,
            Body::Result(TaskResult {
                task_id: id(ID1),
                exit_code: 0,
                error_class: ErrorClass::None,
                worker_id: 42,
                dispatched: 1000,
                started: 2000,
                finished: 3000,
                detail: String::new(),
            }),
        ),
        "result_failfast" => WireMessage::new(
            42,
            Body::Result(TaskResult {
                task_id: id(seq(0)),
                exit_code: 74,
                error_class: ErrorClass::FailFast,
                worker_id: 42,
                dispatched: 5,
                started: 6,
                finished: 7,
                detail: "Stale NFS handle".into(),
            }),
        ),
        "result_negative_exit" => WireMessage::new(
            1,
            Body::Result(TaskResult {
                task_id: id(seq(0xf0)),
                exit_code: -9,
                error_class: ErrorClass::AppError,
                worker_id: 1,
                dispatched: 1,
                started: 1,
                finished: 1,
                detail: "killed".into(),
            }),
        ),
        "suspend" => WireMessage::new(0, Body::Suspend),
        "shutdown" => WireMessage::new(5, Body::Shutdown),
        "ack" => WireMessage::new(0, Body::Ack { status: 0, message: "registered".into() }),
        "client_hello" => WireMessage::new(0, Body::ClientHello { run_id: "run-1".into() }),
        "submit" => {
            let mut s = TaskSpec::new(id(ID1), "echo hi");
            s.payload = b"payload".to_vec();
            WireMessage::new(0, Body::Submit { run_id: "run-1".into(), specs: vec![s] })
        }
        "status_query" => WireMessage::new(0, Body::StatusQuery { run_id: "run-1".into() }),
        "status" => WireMessage::new(0, Body::Status { json: r#"{"run":null}"#.into() }),
        "task_request" => WireMessage::new(77, Body::TaskRequest { max_tasks: 16 }),
        "resume" => WireMessage::new(0, Body::Resume { run_id: "run-1".into() }),
        "submit_reply" => WireMessage::new(
            0,
            Body::SubmitReply {
                entries: vec![
                    (id(ID1), SubmitStatus::Queued),
                    (id(seq(0)), SubmitStatus::Duplicate),
                    (id(seq(0xf0)), SubmitStatus::AlreadyComplete),
                ],
            },
        ),
        other => panic!("no expectation for fixture {other}"),
    }
}

pub fn arb_id() -> impl Strategy<Value = TaskId> {
    any::<[u8; 16]>().prop_map(TaskId)
}

pub fn arb_spec() -> impl Strategy<Value = TaskSpec> {
    (
        arb_id(),
        prop::collection::vec(any::<u8>(), 1..40),
        prop::collection::vec(any::<u8>(), 0..64),
        prop::collection::vec((".{0,8}", ".{0,16}", any::<bool>()), 0..3),
        prop::collection::vec((".{0,8}", ".{0,16}"), 0..3),
    )
        .prop_map(|(id, command, payload, ins, outs)| TaskSpec {
            id,
            command,
            payload,
            inputs: ins.into_iter().map(|(name, source, cacheable)| InputRef { name, source, cacheable }).collect(),
            outputs: outs.into_iter().map(|(name, dest)| OutputRef { name, dest }).collect(),
        })
}

pub fn arb_result() -> impl Strategy<Value = TaskResult> {
    (arb_id(), any::<i32>(), 1u8..4, any::<u64>(), any::<[u64; 3]>(), ".{0,20}").prop_map(
        |(task_id, code, class, worker_id, mut ts, detail)| {
            ts.sort_unstable();
            let (exit_code, error_class) = if code == 0 {
                (0, ErrorClass::None)
            } else {
                (code, ErrorClass::from_code(class).unwrap())
            };
            TaskResult { task_id, exit_code, error_class, worker_id, dispatched: ts[0], started: ts[1], finished: ts[2], detail }
        },
    )
}

pub fn arb_body() -> impl Strategy<Value = Body> {
    let mode = prop_oneof![Just(DispatchMode::Push), Just(DispatchMode::Pull)];
    let status = (0u8..4).prop_map(|c| SubmitStatus::from_code(c).unwrap());
    prop_oneof![
        (any::<u32>(), mode, any::<u32>()).prop_map(|(cores, mode, prefetch)| Body::Register { cores, mode, prefetch }),
        arb_spec().prop_map(Body::TaskDispatch),
        prop::collection::vec(arb_spec(), 0..5).prop_map(Body::TaskBundle),
        arb_result().prop_map(Body::Result),
        prop::collection::vec(arb_id(), 0..5).prop_map(|running| Body::Heartbeat { running }),
        Just(Body::Suspend),
        Just(Body::Shutdown),
        (any::<u8>(), ".{0,20}").prop_map(|(status, message)| Body::Ack { status, message }),
        ".{0,20}".prop_map(|run_id| Body::ClientHello { run_id }),
        (".{0,10}", prop::collection::vec(arb_spec(), 0..4)).prop_map(|(run_id, specs)| Body::Submit { run_id, specs }),
        ".{0,20}".prop_map(|run_id| Body::StatusQuery { run_id }),
        ".{0,40}".prop_map(|json| Body::Status { json }),
        any::<u32>().prop_map(|max_tasks| Body::TaskRequest { max_tasks }),
        ".{0,20}".prop_map(|run_id| Body::Resume { run_id }),
        prop::collection::vec((arb_id(), status), 0..6).prop_map(|entries| Body::SubmitReply { entries }),
    ]
}
