#include <doctest.h>

#include <zlib.h>

#include "fedfreeze/serialize.hpp"
#include "test_util.hpp"

using namespace fedfreeze;
using namespace fedfreeze::test;

namespace {

// nonzero Param # cells of the published VGG16 table, in layer order
const std::vector<int64_t> kVgg16NonzeroCells = {
    1792, 256,  36928,   256,  73856,   512,  147584,  512,  295168,  1024, 590080,  1024, 590080,
    1024, 1180160, 2048, 2359808, 2048, 2359808, 2048, 2359808, 2048, 2359808, 2048, 2359808, 2048,
    5130};

}  // namespace

TEST_CASE("vgg16 descriptor reproduces the published per-layer counts") {
    const auto arch = load_architecture_file(descriptor_path("vgg16_cifar10.json"));
    const auto rep = count_parameters(arch);

    CHECK(rep.total == 14736714);
    CHECK(rep.trainable_units == 14);

    std::vector<int64_t> nonzero;
    for (int64_t c : rep.per_layer)
        if (c != 0) nonzero.push_back(c);
    REQUIRE(nonzero.size() == kVgg16NonzeroCells.size());
    for (size_t i = 0; i < nonzero.size(); ++i) CHECK(nonzero[i] == kVgg16NonzeroCells[i]);

    // spot-check output dimensions against the table
    CHECK(arch.layers[0].output_shape == std::vector<int>{32, 32, 64});
    CHECK(arch.layers[6].output_shape == std::vector<int>{16, 16, 64});
    CHECK(arch.layers.back().output_shape == std::vector<int>{10});
    CHECK(arch.layers[0].label == "conv2d");
    CHECK(arch.layers[1].label == "batch_normalization");
    CHECK(arch.layers[3].label == "conv2d_1");
}

TEST_CASE("casa descriptor has 68884 parameters across 6 trainable units") {
    const auto arch = load_architecture_file(descriptor_path("casa_mlp.json"));
    const auto rep = count_parameters(arch);
    CHECK(rep.total == 68884);
    CHECK(rep.trainable_units == 6);
}

TEST_CASE("closed-form counts for single layers") {
    const auto conv_arch =
        finalize_architecture("c", {32, 32, 3}, {conv(64, 3)});
    CHECK(conv_arch.layers[0].param_count == 1792);

    const auto dense_arch = finalize_architecture("d", {512}, {dense(10)});
    CHECK(dense_arch.layers[0].param_count == 5130);

    const auto bn_arch = finalize_architecture("b", {8, 8, 64}, {bn()});
    CHECK(bn_arch.layers[0].param_count == 256);
    CHECK(bn_arch.layers[0].trainable_param_count == 128);
}

TEST_CASE("empty architecture counts zero parameters") {
    const auto arch = finalize_architecture("empty", {4}, {});
    const auto rep = count_parameters(arch);
    CHECK(rep.total == 0);
    CHECK(rep.trainable_units == 0);
}

TEST_CASE("dimension mismatches are rejected") {
    CHECK_THROWS_AS(finalize_architecture("bad", {4, 4, 3}, {dense(10)}), ShapeError);
    CHECK_THROWS_AS(finalize_architecture("bad", {4}, {conv(8, 3)}), ShapeError);
}

TEST_CASE("model serialization round-trips bit-exactly") {
    auto arch = finalize_architecture(
        "mix", {6, 6, 2},
        {conv(3, 3), bn(), simple(LayerKind::ReLU), simple(LayerKind::Flatten), dense(4),
         simple(LayerKind::Softmax)});
    Model32 m = init_model<float>(arch, 77);
    Rng rng(7);
    randomize_model(m, rng);

    const auto bytes = model_to_bytes(m);
    CHECK(bytes.size() == serialized_model_size(arch));
    CHECK(bytes.size() ==
          kModelHeaderBytes + 3 * kLayerRecordPrefixBytes +
              static_cast<size_t>(arch.total_params()) * 4 + kCrcBytes);

    const Model32 back = model_from_bytes(arch, bytes);
    CHECK(models_bitwise_equal(m, back));
    CHECK(model_to_bytes(back) == bytes);
}

TEST_CASE("serialized size is 4 bytes per parameter plus fixed overhead") {
    const auto vgg = load_architecture_file(descriptor_path("vgg16_cifar10.json"));
    // 27 parameterized layers: 13 conv + 13 bn + 1 dense
    CHECK(serialized_model_size(vgg) ==
          kModelHeaderBytes + 27 * kLayerRecordPrefixBytes + 4ull * 14736714ull + kCrcBytes);
}

TEST_CASE("a vgg16-shaped model serializes to its predicted 59MB payload") {
    const auto vgg = load_architecture_file(descriptor_path("vgg16_cifar10.json"));
    const Model32 m = init_model<float>(vgg, 1);
    const auto bytes = model_to_bytes(m);
    CHECK(bytes.size() == serialized_model_size(vgg));
    CHECK(bytes.size() == 58947146);  // 16 + 27*10 + 4*14,736,714 + 4
}

TEST_CASE("scalar parameter 1.0 encodes as IEEE-754 little-endian 0x3F800000") {
    auto arch = finalize_architecture("w", {1}, {dense(1)});
    Model32 m = init_model<float>(arch, 0);
    m.params[0][0][0] = 1.0f;  // weight
    m.params[0][1][0] = 0.0f;  // bias

    const auto bytes = model_to_bytes(m);
    const size_t at = kModelHeaderBytes + kLayerRecordPrefixBytes;
    CHECK(bytes[at + 0] == 0x00);
    CHECK(bytes[at + 1] == 0x00);
    CHECK(bytes[at + 2] == 0x80);
    CHECK(bytes[at + 3] == 0x3F);
}

TEST_CASE("corrupted model data is rejected") {
    auto arch = mlp_arch(4, {5, 2});
    Model32 m = init_model<float>(arch, 3);
    auto bytes = model_to_bytes(m);

    SUBCASE("truncation") {
        bytes.resize(bytes.size() / 2);
        CHECK_THROWS_AS(model_from_bytes(arch, bytes), IoError);
    }
    SUBCASE("bit flip breaks the checksum") {
        bytes[kModelHeaderBytes + 12] ^= 0x40;
        CHECK_THROWS_AS(model_from_bytes(arch, bytes), IoError);
    }
    SUBCASE("version mismatch") {
        bytes[4] = 0x7F;  // version lives right after the magic
        const uint32_t crc = static_cast<uint32_t>(
            crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
        for (int i = 0; i < 4; ++i)
            bytes[bytes.size() - 4 + static_cast<size_t>(i)] = static_cast<uint8_t>(crc >> (8 * i));
        CHECK_THROWS_AS(model_from_bytes(arch, bytes), IoError);
    }
    SUBCASE("wrong architecture") {
        auto other = mlp_arch(4, {6, 2});
        CHECK_THROWS_AS(model_from_bytes(other, bytes), IoError);
    }
}

TEST_CASE("partial update serialization round-trips and sizes exactly") {
    auto arch = mlp_arch(6, {8, 7, 5, 3});
    Model32 m = init_model<float>(arch, 9);
    Rng rng(31);
    randomize_model(m, rng);

    PartialUpdate32 upd;
    upd.meta = {12, 3, 250, 0.75, 81.5};
    upd.mask = FreezeMask::of({1, 3});
    for (int li : upd.mask.layer_indices(arch)) upd.tensors[li] = m.params[static_cast<size_t>(li)];

    const auto bytes = update_to_bytes(arch, upd);
    CHECK(bytes.size() == serialized_update_size(arch, upd.mask));
    CHECK(update_tensor_bytes(arch, upd.mask) ==
          4 * static_cast<size_t>(arch.units[1].param_count + arch.units[3].param_count));

    const auto back = update_from_bytes(arch, bytes);
    CHECK(back.meta.round == 12);
    CHECK(back.meta.client_id == 3);
    CHECK(back.meta.sample_count == 250);
    CHECK(back.meta.local_loss == 0.75);
    CHECK(back.meta.local_accuracy == 81.5);
    CHECK(back.mask.units == upd.mask.units);
    for (const auto& [li, tensors] : upd.tensors)
        for (size_t p = 0; p < tensors.size(); ++p)
            CHECK(std::memcmp(tensors[p].ptr(), back.tensors.at(li)[p].ptr(),
                              tensors[p].numel() * sizeof(float)) == 0);
    CHECK(update_to_bytes(arch, back) == bytes);
}
