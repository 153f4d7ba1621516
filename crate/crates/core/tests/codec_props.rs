use dynflow::message::{Addr, Channel, Message};
use dynflow::wire::{frame_bytes, read_frame};
use dynflow::{decode_value, encode_value, Arg, NodeId, ObjectId, Resources, Table, TaskId, TaskSpec, TaskState, Value};
use proptest::prelude::*;

fn value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        any::<i64>().prop_map(Value::Int),
        any::<f64>().prop_map(Value::Float),
        proptest::collection::vec(any::<u8>(), 0..32).prop_map(Value::Bytes),
        ".{0,16}".prop_map(Value::Str),
        any::<[u8; 16]>().prop_map(|b| Value::Ref(ObjectId(b))),
    ];
    leaf.prop_recursive(6, 64, 6, |inner| proptest::collection::vec(inner, 0..6).prop_map(Value::List))
}

fn spec() -> impl Strategy<Value = TaskSpec> {
    (
        any::<[u8; 16]>(),
        "[a-z_]{1,12}",
        proptest::collection::vec(
            prop_oneof![value().prop_map(Arg::Value), any::<[u8; 16]>().prop_map(|b| Arg::Future(ObjectId(b)))],
            0..4,
        ),
        1u32..4,
        0u32..8,
        0u32..2,
    )
        .prop_map(|(id, name, args, n, cpu, gpu)| TaskSpec::new(TaskId(id), &name, args, n, Resources::new(cpu, gpu)))
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (spec(), any::<u32>()).prop_map(|(spec, n)| Message::SubmitRecord { req: 9, spec, node: NodeId(n) }),
        spec().prop_map(|spec| Message::Submit { spec }),
        (any::<u64>(), any::<[u8; 16]>(), 0u32..5).prop_map(|(req, t, k)| {
            let state = match k {
                0 => TaskState::Submitted,
                1 => TaskState::Running(NodeId(k)),
                2 => TaskState::Assigned(NodeId(7)),
                3 => TaskState::Done,
                _ => TaskState::Lost,
            };
            Message::UpdateState { req, task: TaskId(t), state, node: Some(NodeId(k)) }
        }),
        (any::<[u8; 16]>(), proptest::collection::vec(any::<u8>(), 0..64))
            .prop_map(|(o, payload)| Message::FetchResponse { object: ObjectId(o), payload }),
        (any::<u64>(), proptest::collection::vec(any::<[u8; 16]>(), 0..8), any::<bool>()).prop_map(|(req, ids, snapshot)| {
            Message::WaitReply { req, ready: ids.into_iter().map(ObjectId).collect(), snapshot }
        }),
        (any::<[u8; 16]>(), proptest::collection::vec(any::<u8>(), 0..32))
            .prop_map(|(k, record)| Message::Notify { channel: Channel::key(Table::Object, k), record }),
        (any::<u32>(), any::<u32>(), any::<u32>()).prop_map(|(n, c, q)| Message::Heartbeat {
            node: NodeId(n),
            total: Resources::new(c, 1),
            available: Resources::new(c / 2, 0),
            queue_len: q,
        }),
        (any::<u64>(), proptest::collection::vec(".{0,8}", 0..3)).prop_map(|(req, e)| Message::GetReply {
            req,
            result: if e.is_empty() { Ok(vec![1, 2]) } else { Err(e.concat()) },
        }),
        (spec(), 0u32..3).prop_map(|(spec, i)| Message::DeliveryFailed {
            to: Addr::Global(i),
            inner: Box::new(Message::Spill { spec, origin: NodeId(i) }),
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn value_round_trip(v in value()) {
        let bytes = encode_value(&v).unwrap();
        let back = decode_value(&bytes).unwrap();
        prop_assert_eq!(&back, &v);
        prop_assert_eq!(encode_value(&back).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn message_round_trip_through_frames(m in message()) {
        let frame = frame_bytes(m.frame_type(), &m.encode_payload());
        let (ty, payload) = read_frame(&mut frame.as_slice()).unwrap().unwrap();
        prop_assert_eq!(Message::decode(ty, &payload).unwrap(), m);
    }

    #[test]
    fn decoding_garbage_never_panics(ty in 0x10u8..0x40, bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = Message::decode(ty, &bytes);
        let _ = decode_value(&bytes);
    }
}
