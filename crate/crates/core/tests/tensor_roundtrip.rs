use forecal::{read_tensor, write_tensor, Tensor};
use proptest::prelude::*;

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..6, 1..=4).prop_flat_map(|shape| {
        let len: usize = shape.iter().product();
        let floats = prop::collection::vec(any::<u32>(), len)
            .prop_map({
                let shape = shape.clone();
                move |bits| Tensor::from_f32(shape.clone(), bits.into_iter().map(f32::from_bits).collect()).unwrap()
            });
        let ints = prop::collection::vec(any::<i64>(), len)
            .prop_map(move |v| Tensor::from_i64(shape.clone(), v).unwrap());
        prop_oneof![floats, ints]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn write_then_read_is_identity(t in tensor_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fct");
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        prop_assert_eq!(back.dtype(), t.dtype());
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.to_bytes(), t.to_bytes());
        prop_assert_eq!(std::fs::read(&path).unwrap(), t.to_bytes());
    }

    #[test]
    fn decode_then_encode_is_identity(t in tensor_strategy()) {
        let bytes = t.to_bytes();
        prop_assert_eq!(Tensor::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }
}
