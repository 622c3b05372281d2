#include "ofl/frozen_stack.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ofl/checksum.hpp"
#include "ofl/errors.hpp"
#include "ofl/rng.hpp"
#include "ofl/tensor_io.hpp"

namespace ofl {

namespace {

constexpr int kKernel = 3;

ConvLayer make_layer(Rng& rng, int out, int in, int k) {
    ConvLayer l;
    l.w = Tensor({out, in, k, k});
    const float a = static_cast<float>(std::sqrt(6.0 / (static_cast<double>(in) * k * k)));
    for (std::size_t i = 0; i < l.w.numel(); ++i) l.w[i] = rng.uniform_f(-a, a);
    l.b = Tensor({out});
    return l;
}

void check_image(const Tensor& image) {
    require_shape(image.ndim() == 3 && image.extent(0) == 3,
                  "encode_image: expected 3×H×W, got " + image.shape_str());
    require_shape(image.extent(1) % 4 == 0 && image.extent(2) % 4 == 0,
                  "encode_image: H and W must be multiples of 4");
    for (std::size_t i = 0; i < image.numel(); ++i) {
        if (image[i] < 0.0f || image[i] > 1.0f) {
            throw ValidationError("encode_image: pixel values must lie in [0,1]");
        }
    }
}

}  // namespace

StackParams init_stack(std::uint64_t seed, int C, int D) {
    if (C < 4 || C % 2 != 0) throw ConfigError("init_stack: C must be even and >= 4");
    if (D < 2) throw ConfigError("init_stack: D must be >= 2");
    StackParams p;
    p.seed = seed;
    p.C = C;
    p.D = D;
    Rng rng = Rng(seed).fork(0x57ACFULL);
    p.enc1 = make_layer(rng, C / 2, 3, kKernel);
    p.enc2 = make_layer(rng, C, C / 2, kKernel);
    p.mem1 = make_layer(rng, C, C + 1, kKernel);
    p.mem2 = make_layer(rng, D, C, kKernel);
    p.dec1 = make_layer(rng, C / 2, C, kKernel);
    p.dec2 = make_layer(rng, 1, C / 2, kKernel);
    return p;
}

Tensor encode_image(const StackParams& p, const Tensor& image) {
    check_image(image);
    Tensor h = relu(conv2d(image, p.enc1.w, &p.enc1.b, /*stride=*/2));
    return relu(conv2d(h, p.enc2.w, &p.enc2.b, /*stride=*/2));
}

Tensor encode_memory(const StackParams& p, const Tensor& feats, const Tensor& mask_prob) {
    require_shape(feats.ndim() == 3 && feats.extent(0) == p.C,
                  "encode_memory: features must be C×H'×W', got " + feats.shape_str());
    require_shape(mask_prob.ndim() == 2 && mask_prob.extent(0) == 4 * feats.extent(1) &&
                      mask_prob.extent(1) == 4 * feats.extent(2),
                  "encode_memory: mask shape " + mask_prob.shape_str() +
                      " inconsistent with features " + feats.shape_str());
    for (std::size_t i = 0; i < mask_prob.numel(); ++i) {
        if (mask_prob[i] < 0.0f || mask_prob[i] > 1.0f) {
            throw ValidationError("encode_memory: mask probabilities must lie in [0,1]");
        }
    }
    Tensor pooled = avgpool_to_channel(mask_prob, 4);
    Tensor x = concat_channels(feats, pooled);
    Tensor h = relu(conv2d(x, p.mem1.w, &p.mem1.b));
    return conv2d(h, p.mem2.w, &p.mem2.b);
}

Tensor decode_mask(const StackParams& p, const Tensor& fused) {
    Tape tape;
    return decode_mask(p, tape, tape.leaf(fused, false)).value;
}

TracedTensor decode_mask(const StackParams& p, Tape& tape, const TracedTensor& fused) {
    require_shape(fused.value.ndim() == 3 && fused.value.extent(0) == p.C,
                  "decode_mask: input must be C×H'×W', got " + fused.value.shape_str());
    TracedTensor w1 = tape.leaf(p.dec1.w), b1 = tape.leaf(p.dec1.b);
    TracedTensor w2 = tape.leaf(p.dec2.w), b2 = tape.leaf(p.dec2.b);
    TracedTensor h = tape.relu(tape.conv2d(fused, w1, &b1));
    TracedTensor logits = tape.conv2d(h, w2, &b2);
    TracedTensor up = tape.upsample2x(tape.upsample2x(logits));
    TracedTensor prob = tape.sigmoid(up);
    return tape.reshape(prob, {prob.value.extent(1), prob.value.extent(2)});
}

std::uint64_t stack_checksum(const StackParams& p) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const ConvLayer* l : {&p.enc1, &p.enc2, &p.mem1, &p.mem2, &p.dec1, &p.dec2}) {
        h = checksum(l->w, h);
        h = checksum(l->b, h);
    }
    return h;
}

namespace {

const char* kLayerNames[] = {"enc1", "enc2", "mem1", "mem2", "dec1", "dec2"};

std::vector<ConvLayer*> layer_ptrs(StackParams& p) {
    return {&p.enc1, &p.enc2, &p.mem1, &p.mem2, &p.dec1, &p.dec2};
}

std::vector<const ConvLayer*> layer_ptrs(const StackParams& p) {
    return {&p.enc1, &p.enc2, &p.mem1, &p.mem2, &p.dec1, &p.dec2};
}

}  // namespace

void save_stack(const StackParams& p, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["seed"] = p.seed;
    manifest["C"] = p.C;
    manifest["D"] = p.D;
    auto layers = nlohmann::json::array();
    auto ptrs = layer_ptrs(p);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        write_tensor(ptrs[i]->w, dir / (std::string(kLayerNames[i]) + "_w.otns"));
        write_tensor(ptrs[i]->b, dir / (std::string(kLayerNames[i]) + "_b.otns"));
        layers.push_back(kLayerNames[i]);
    }
    manifest["layers"] = layers;
    std::ofstream f(dir / "stack.json");
    if (!f) throw IoError("cannot write " + (dir / "stack.json").string());
    f << manifest.dump(2) << "\n";
}

StackParams load_stack(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "stack.json";
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open " + manifest_path.string());
    nlohmann::json manifest = nlohmann::json::parse(f, nullptr, /*allow_exceptions=*/true);
    StackParams p;
    p.seed = manifest.at("seed").get<std::uint64_t>();
    p.C = manifest.at("C").get<int>();
    p.D = manifest.at("D").get<int>();
    auto ptrs = layer_ptrs(p);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        ptrs[i]->w = read_tensor(dir / (std::string(kLayerNames[i]) + "_w.otns"));
        ptrs[i]->b = read_tensor(dir / (std::string(kLayerNames[i]) + "_b.otns"));
    }
    return p;
}

}  // namespace ofl
