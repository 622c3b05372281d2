#include "ofl/eval_data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ofl/checksum.hpp"
#include "ofl/errors.hpp"
#include "ofl/rng.hpp"
#include "ofl/tensor_io.hpp"

namespace ofl {

namespace {

void require_binary_mask(const Tensor& m, const char* who) {
    if (m.ndim() != 2) throw ShapeError(std::string(who) + ": mask must be H×W");
    for (std::size_t i = 0; i < m.numel(); ++i) {
        if (m[i] != 0.0f && m[i] != 1.0f) {
            throw ValidationError(std::string(who) + ": mask must be binary");
        }
    }
}

}  // namespace

double dice(const Tensor& pred, const Tensor& gt) {
    require_shape(pred.same_shape(gt), "dice: shapes " + pred.shape_str() + " vs " + gt.shape_str());
    require_binary_mask(pred, "dice");
    require_binary_mask(gt, "dice");
    long inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const bool p = pred[i] != 0.0f, g = gt[i] != 0.0f;
        inter += (p && g) ? 1 : 0;
        np += p ? 1 : 0;
        ng += g ? 1 : 0;
    }
    if (np + ng == 0) return 1.0;  // both empty by convention
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<std::pair<int, int>> boundary_pixels(const Tensor& mask) {
    const int H = mask.extent(0), W = mask.extent(1);
    std::vector<std::pair<int, int>> out;
    auto fg = [&](int y, int x) {
        return y >= 0 && y < H && x >= 0 && x < W && mask.at(y, x) != 0.0f;
    };
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (mask.at(y, x) == 0.0f) continue;
            if (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) {
                out.emplace_back(y, x);
            }
        }
    }
    return out;
}

double avg_hausdorff(const Tensor& pred, const Tensor& gt) {
    require_shape(pred.same_shape(gt), "avg_hausdorff: shapes " + pred.shape_str() + " vs " +
                                           gt.shape_str());
    require_binary_mask(pred, "avg_hausdorff");
    require_binary_mask(gt, "avg_hausdorff");
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(gt);
    if (bp.empty() && bg.empty()) return 0.0;
    if (bp.empty() || bg.empty()) {
        const int H = pred.extent(0), W = pred.extent(1);
        return std::hypot(static_cast<double>(H - 1), static_cast<double>(W - 1));
    }
    auto directed_mean = [](const std::vector<std::pair<int, int>>& from,
                            const std::vector<std::pair<int, int>>& to) {
        double acc = 0.0;
        for (const auto& [fy, fx] : from) {
            double best = 1e300;
            for (const auto& [ty, tx] : to) {
                const double dy = fy - ty, dx = fx - tx;
                best = std::min(best, dy * dy + dx * dx);
            }
            acc += std::sqrt(best);
        }
        return acc / static_cast<double>(from.size());
    };
    return 0.5 * (directed_mean(bp, bg) + directed_mean(bg, bp));
}

// --- PGM ---------------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, int w, int h,
               const std::vector<unsigned char>& data) {
    if (static_cast<std::size_t>(w) * h != data.size()) {
        throw ShapeError("write_pgm: data length does not match dims");
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << "P5\n" << w << ' ' << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

PgmImage read_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "P5") throw FormatError(0, "not a P5 PGM: " + path.string());
    auto next_int = [&f, &path]() {
        int c;
        while ((c = f.peek()) != EOF) {
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
        int v;
        if (!(f >> v)) throw FormatError(0, "bad PGM header in " + path.string());
        return v;
    };
    PgmImage img;
    img.w = next_int();
    img.h = next_int();
    const int maxval = next_int();
    if (img.w < 1 || img.h < 1 || maxval < 1 || maxval > 255) {
        throw FormatError(0, "unsupported PGM geometry in " + path.string());
    }
    f.get();  // single whitespace after maxval
    img.data.resize(static_cast<std::size_t>(img.w) * img.h);
    f.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.data.size())) {
        throw FormatError(static_cast<std::size_t>(f.gcount()), "truncated PGM payload in " + path.string());
    }
    return img;
}

void write_mask_pgm(const Tensor& mask, const std::filesystem::path& path) {
    require_binary_mask(mask, "write_mask_pgm");
    const int H = mask.extent(0), W = mask.extent(1);
    std::vector<unsigned char> data(static_cast<std::size_t>(H) * W);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = mask[i] != 0.0f ? 255 : 0;
    write_pgm(path, W, H, data);
}

// --- generator -----------------------------------------------------------------

namespace {

struct Ellipse {
    double cx, cy, rx, ry, theta, intensity;
    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double u = (dx * ct + dy * st) / rx;
        const double v = (-dx * st + dy * ct) / ry;
        return u * u + v * v <= 1.0;
    }
};

void paint(std::vector<double>& img, int size, const Ellipse& e) {
    const int x0 = std::max(0, static_cast<int>(e.cx - std::max(e.rx, e.ry) - 1));
    const int x1 = std::min(size - 1, static_cast<int>(e.cx + std::max(e.rx, e.ry) + 1));
    const int y0 = std::max(0, static_cast<int>(e.cy - std::max(e.rx, e.ry) - 1));
    const int y1 = std::min(size - 1, static_cast<int>(e.cy + std::max(e.rx, e.ry) + 1));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (e.contains(x, y)) img[static_cast<std::size_t>(y) * size + x] = e.intensity;
        }
    }
}

std::vector<double> gaussian_kernel(double sigma) {
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + r)];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable blur; the kernel is renormalized where it overhangs the border.
void blur_inplace(std::vector<double>& img, int size, double sigma) {
    if (sigma <= 0.0) return;
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    std::vector<double> tmp(img.size());
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int xx = x + i;
                if (xx < 0 || xx >= size) continue;
                acc += k[static_cast<std::size_t>(i + r)] * img[static_cast<std::size_t>(y) * size + xx];
                wsum += k[static_cast<std::size_t>(i + r)];
            }
            tmp[static_cast<std::size_t>(y) * size + x] = acc / wsum;
        }
    }
    for (int x = 0; x < size; ++x) {
        for (int y = 0; y < size; ++y) {
            double acc = 0.0, wsum = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int yy = y + i;
                if (yy < 0 || yy >= size) continue;
                acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(yy) * size + x];
                wsum += k[static_cast<std::size_t>(i + r)];
            }
            img[static_cast<std::size_t>(y) * size + x] = acc / wsum;
        }
    }
}

void assert_single_component(const Tensor& mask, const std::string& what) {
    const int H = mask.extent(0), W = mask.extent(1);
    int first = -1, count = 0;
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        if (mask[i] != 0.0f) {
            ++count;
            if (first < 0) first = static_cast<int>(i);
        }
    }
    if (count == 0) throw ValidationError(what + ": empty target mask");
    std::vector<char> seen(mask.numel(), 0);
    std::deque<int> frontier{first};
    seen[static_cast<std::size_t>(first)] = 1;
    int reached = 0;
    while (!frontier.empty()) {
        const int p = frontier.front();
        frontier.pop_front();
        ++reached;
        const int y = p / W, x = p % W;
        const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
        for (const auto& [ny, nx] : nb) {
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            const int q = ny * W + nx;
            if (!seen[static_cast<std::size_t>(q)] && mask[static_cast<std::size_t>(q)] != 0.0f) {
                seen[static_cast<std::size_t>(q)] = 1;
                frontier.push_back(q);
            }
        }
    }
    if (reached != count) {
        throw ValidationError(what + ": target mask is not a single 4-connected component");
    }
}

}  // namespace

SequenceDataset gen_synthetic(const GenParams& gp, const std::filesystem::path& out_dir) {
    if (gp.size < 16 || gp.size % 4 != 0) throw ConfigError("gen_synthetic: size must be >= 16 and a multiple of 4");
    if (gp.n_sequences < 1 || gp.frames_per_sequence < 1) throw ConfigError("gen_synthetic: need sequences and frames");
    if (gp.train_sequences < 0 || gp.train_sequences > gp.n_sequences) {
        throw ConfigError("gen_synthetic: train_sequences out of range");
    }
    if (gp.n_distractors < 0) throw ConfigError("gen_synthetic: n_distractors must be >= 0");
    if (gp.radius_min < 2.0 || gp.radius_max < gp.radius_min) {
        throw ConfigError("gen_synthetic: bad radius range");
    }
    std::filesystem::create_directories(out_dir);
    const int S = gp.size;

    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["resolution"] = {S, S};
    manifest["classes"] = {"target"};
    auto sequences = nlohmann::json::array();

    for (int s = 0; s < gp.n_sequences; ++s) {
        Rng rng = Rng(gp.seed).fork(0x6E5EULL).fork(static_cast<std::uint64_t>(s));
        std::ostringstream seq_name;
        seq_name << "seq_" << (s < 10 ? "0" : "") << s;
        const std::filesystem::path seq_dir = out_dir / seq_name.str();
        std::filesystem::create_directories(seq_dir);

        const double bg = rng.uniform(0.22, 0.32);
        Ellipse target;
        target.rx = rng.uniform(gp.radius_min, gp.radius_max);
        target.ry = rng.uniform(gp.radius_min, gp.radius_max);
        target.theta = rng.uniform(0.0, 3.14159265358979323846);
        target.intensity = rng.uniform(0.68, 0.80);
        const double margin = std::max(target.rx, target.ry) + 3.0;
        target.cx = rng.uniform(margin, S - margin);
        target.cy = rng.uniform(margin, S - margin);
        double tvx = rng.uniform(-gp.drift, gp.drift);
        double tvy = rng.uniform(-gp.drift, gp.drift);

        struct Drifter {
            Ellipse e;
            double vx, vy;
        };
        std::vector<Drifter> distractors;
        for (int d = 0; d < gp.n_distractors; ++d) {
            Drifter dr;
            dr.e.rx = rng.uniform(0.55, 0.95) * target.rx;
            dr.e.ry = rng.uniform(0.55, 0.95) * target.ry;
            dr.e.theta = rng.uniform(0.0, 3.14159265358979323846);
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            dr.e.intensity = std::clamp(target.intensity + sign * gp.distractor_gap, 0.0, 1.0);
            const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double dist = std::max(target.rx, target.ry) + std::max(dr.e.rx, dr.e.ry) +
                                rng.uniform(2.0, 5.0);
            dr.e.cx = target.cx + dist * std::cos(ang);
            dr.e.cy = target.cy + dist * std::sin(ang);
            dr.vx = rng.uniform(-gp.drift, gp.drift);
            dr.vy = rng.uniform(-gp.drift, gp.drift);
            distractors.push_back(dr);
        }

        auto frames = nlohmann::json::array();
        auto mask_files = nlohmann::json::array();

        for (int fidx = 0; fidx < gp.frames_per_sequence; ++fidx) {
            // wobble the target axes slightly along the sequence
            Ellipse tgt = target;
            tgt.rx *= 1.0 + 0.05 * std::sin(0.9 * fidx + 0.3);
            tgt.ry *= 1.0 + 0.05 * std::cos(0.7 * fidx + 1.1);

            std::vector<double> img(static_cast<std::size_t>(S) * S, bg);
            for (auto& dr : distractors) paint(img, S, dr.e);
            paint(img, S, tgt);

            Tensor mask({S, S});
            for (int y = 0; y < S; ++y) {
                for (int x = 0; x < S; ++x) {
                    if (tgt.contains(x, y)) mask.at(y, x) = 1.0f;
                }
            }
            assert_single_component(mask, seq_name.str() + " frame " + std::to_string(fidx));

            blur_inplace(img, S, gp.blur_sigma);
            for (double& v : img) {
                v = std::clamp(v + gp.noise_sigma * rng.normal(), 0.0, 1.0);
            }

            Tensor image({3, S, S});
            for (int c = 0; c < 3; ++c) {
                for (std::size_t i = 0; i < img.size(); ++i) {
                    image[static_cast<std::size_t>(c) * S * S + i] = static_cast<float>(img[i]);
                }
            }

            std::ostringstream fn;
            fn << "frame_" << (fidx < 10 ? "0" : "") << fidx;
            const std::string frame_rel = seq_name.str() + "/" + fn.str() + ".otns";
            const std::string mask_rel = seq_name.str() + "/" + fn.str() + "_target.pgm";
            write_tensor(image, out_dir / frame_rel);
            write_mask_pgm(mask, out_dir / mask_rel);
            frames.push_back(frame_rel);
            mask_files.push_back(mask_rel);

            // advance the scene
            target.cx += tvx;
            target.cy += tvy;
            if (target.cx < margin || target.cx > S - margin) tvx = -tvx, target.cx += 2 * tvx;
            if (target.cy < margin || target.cy > S - margin) tvy = -tvy, target.cy += 2 * tvy;
            for (auto& dr : distractors) {
                dr.e.cx += dr.vx;
                dr.e.cy += dr.vy;
                if (dr.e.cx < 1.0 || dr.e.cx > S - 2.0) dr.vx = -dr.vx, dr.e.cx += 2 * dr.vx;
                if (dr.e.cy < 1.0 || dr.e.cy > S - 2.0) dr.vy = -dr.vy, dr.e.cy += 2 * dr.vy;
                // keep distractors adjacent but disjoint from the target
                const double dx = dr.e.cx - target.cx, dy = dr.e.cy - target.cy;
                const double dist = std::hypot(dx, dy);
                const double min_dist =
                    std::max(target.rx, target.ry) + std::max(dr.e.rx, dr.e.ry) + 1.5;
                if (dist < min_dist && dist > 1e-9) {
                    dr.e.cx = target.cx + dx / dist * min_dist;
                    dr.e.cy = target.cy + dy / dist * min_dist;
                }
            }
        }

        nlohmann::json seq;
        seq["id"] = seq_name.str();
        seq["split"] = s < gp.train_sequences ? "train" : "test";
        seq["frames"] = frames;
        seq["masks"] = {{"target", mask_files}};
        sequences.push_back(seq);
    }
    manifest["sequences"] = sequences;

    const auto manifest_path = out_dir / "manifest.json";
    std::ofstream f(manifest_path);
    if (!f) throw IoError("cannot write " + manifest_path.string());
    f << manifest.dump(2) << "\n";
    f.close();

    return load_dataset(manifest_path);
}

// --- loading --------------------------------------------------------------------

std::vector<const SequenceRecord*> SequenceDataset::split(const std::string& tag) const {
    std::vector<const SequenceRecord*> out;
    for (const auto& s : sequences) {
        if (s.split == tag) out.push_back(&s);
    }
    return out;
}

SequenceDataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path, std::ios::binary);
    if (!f) throw IoError("cannot open " + manifest_path.string());
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(static_cast<std::size_t>(e.byte), "bad manifest JSON in " +
                                                                manifest_path.string());
    }

    SequenceDataset ds;
    ds.manifest_path = std::filesystem::absolute(manifest_path);
    ds.manifest_checksum = fnv1a64(raw.data(), raw.size());
    const auto res = manifest.at("resolution");
    ds.H = res.at(0).get<int>();
    ds.W = res.at(1).get<int>();
    if (ds.H < 4 || ds.W < 4 || ds.H % 4 != 0 || ds.W % 4 != 0) {
        throw ValidationError("dataset resolution must be a multiple of 4");
    }
    for (const auto& c : manifest.at("classes")) ds.classes.push_back(c.get<std::string>());

    const auto base = ds.manifest_path.parent_path();
    for (const auto& s : manifest.at("sequences")) {
        SequenceRecord rec;
        rec.id = s.at("id").get<std::string>();
        rec.split = s.at("split").get<std::string>();
        if (rec.split != "train" && rec.split != "test") {
            throw ValidationError("sequence " + rec.id + ": unknown split tag '" + rec.split + "'");
        }
        for (const auto& fr : s.at("frames")) {
            const auto p = base / fr.get<std::string>();
            if (!std::filesystem::exists(p)) throw IoError("missing frame file: " + p.string());
            const auto dims = read_tensor_dims(p);
            if (dims.size() != 3 || dims[0] != 3 || dims[1] != ds.H || dims[2] != ds.W) {
                throw ValidationError("frame resolution mismatch: " + p.string());
            }
            rec.frames.push_back(p);
        }
        for (const auto& [cls, files] : s.at("masks").items()) {
            if (std::find(ds.classes.begin(), ds.classes.end(), cls) == ds.classes.end()) {
                throw ValidationError("sequence " + rec.id + ": mask class '" + cls +
                                      "' not in dataset class list");
            }
            for (const auto& mf : files) {
                const auto p = base / mf.get<std::string>();
                if (!std::filesystem::exists(p)) throw IoError("missing mask file: " + p.string());
                rec.masks[cls].push_back(p);
            }
            if (rec.masks[cls].size() != rec.frames.size()) {
                throw ValidationError("sequence " + rec.id + ": mask count for class '" + cls +
                                      "' does not match frame count");
            }
        }
        if (rec.split == "train") {
            for (const auto& cls : ds.classes) {
                if (rec.masks.find(cls) == rec.masks.end()) {
                    throw ValidationError("train sequence " + rec.id + ": missing masks for class '" +
                                          cls + "'");
                }
            }
        }
        ds.sequences.push_back(std::move(rec));
    }
    return ds;
}

Tensor load_image(const std::filesystem::path& path, int expect_h, int expect_w) {
    Tensor t = read_tensor(path);
    if (t.ndim() != 3 || t.extent(0) != 3) {
        throw ValidationError("image tensor must be 3×H×W: " + path.string());
    }
    if (expect_h > 0 && (t.extent(1) != expect_h || t.extent(2) != expect_w)) {
        throw ValidationError("image resolution mismatch: " + path.string());
    }
    return t;
}

Tensor load_mask(const std::filesystem::path& path, int expect_h, int expect_w) {
    const PgmImage img = read_pgm(path);
    if (expect_h > 0 && (img.h != expect_h || img.w != expect_w)) {
        throw ValidationError("mask resolution mismatch: " + path.string());
    }
    Tensor m({img.h, img.w});
    for (std::size_t i = 0; i < img.data.size(); ++i) m[i] = img.data[i] >= 128 ? 1.0f : 0.0f;
    return m;
}

void render_overlay(const Tensor& image, const Tensor& mask, const std::filesystem::path& out) {
    require_shape(image.ndim() == 3 && image.extent(0) == 3, "render_overlay: image must be 3×H×W");
    require_shape(mask.ndim() == 2 && mask.extent(0) == image.extent(1) &&
                      mask.extent(1) == image.extent(2),
                  "render_overlay: mask shape " + mask.shape_str() + " vs image " +
                      image.shape_str());
    const int H = mask.extent(0), W = mask.extent(1);
    std::vector<unsigned char> gray(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H * W; ++i) {
        const double v = (image[static_cast<std::size_t>(i)] +
                          image[static_cast<std::size_t>(H) * W + i] +
                          image[2 * static_cast<std::size_t>(H) * W + i]) /
                         3.0;
        gray[static_cast<std::size_t>(i)] =
            static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L));
    }
    for (const auto& [y, x] : boundary_pixels(mask)) {
        gray[static_cast<std::size_t>(y) * W + x] = 255;
    }
    write_pgm(out, W, H, gray);
}

}  // namespace ofl
