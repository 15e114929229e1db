#include "recall/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "recall/errors.hpp"
#include "recall/hash.hpp"

namespace recall {

namespace {

constexpr double kBackgroundLevel = 0.12;
constexpr double kBackgroundJitter = 0.05;
constexpr int kSubsamples = 4;  // 4x4 coverage grid per pixel

constexpr std::uint64_t kJitterStream = 0x6a69747465720001ULL;
constexpr std::uint64_t kRefStream = 0x7265666572656e63ULL;

const std::array<std::array<double, 3>, 3> kColorValues = {{
    {0.92, 0.12, 0.12},  // red
    {0.12, 0.85, 0.16},  // green
    {0.15, 0.22, 0.92},  // blue
}};

// Cross arm half-thickness as a fraction of the radius.
constexpr double kCrossArm = 0.35;

bool inside_shape(const ShapeSpec& s, double x, double y) {
    double dx = x - s.cx;
    double dy = y - s.cy;
    double r = s.radius;
    switch (s.shape) {
        case ShapeClass::circle:
            return dx * dx + dy * dy <= r * r;
        case ShapeClass::square: {
            // Axis-aligned, circumradius r.
            double half = r / std::sqrt(2.0);
            return std::abs(dx) <= half && std::abs(dy) <= half;
        }
        case ShapeClass::triangle: {
            // Equilateral, apex up, circumradius r. Image y grows downward.
            double ax = s.cx, ay = s.cy - r;
            double bx = s.cx - r * std::sqrt(3.0) / 2.0, by = s.cy + r * 0.5;
            double cxr = s.cx + r * std::sqrt(3.0) / 2.0, cyr = s.cy + r * 0.5;
            auto side = [](double x0, double y0, double x1, double y1, double px, double py) {
                return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
            };
            double d1 = side(ax, ay, bx, by, x, y);
            double d2 = side(bx, by, cxr, cyr, x, y);
            double d3 = side(cxr, cyr, ax, ay, x, y);
            bool any_neg = d1 < 0 || d2 < 0 || d3 < 0;
            bool any_pos = d1 > 0 || d2 > 0 || d3 > 0;
            return !(any_neg && any_pos);
        }
        case ShapeClass::cross: {
            double arm = r * kCrossArm;
            bool horiz = std::abs(dx) <= r && std::abs(dy) <= arm;
            bool vert = std::abs(dy) <= r && std::abs(dx) <= arm;
            return horiz || vert;
        }
    }
    return false;
}

double background_for_seed(std::uint64_t seed) {
    Rng rng(derive_seed(seed, kJitterStream));
    return kBackgroundLevel + rng.uniform(-kBackgroundJitter, kBackgroundJitter);
}

}  // namespace

const char* shape_name(ShapeClass s) {
    switch (s) {
        case ShapeClass::circle: return "circle";
        case ShapeClass::square: return "square";
        case ShapeClass::triangle: return "triangle";
        case ShapeClass::cross: return "cross";
    }
    throw ConfigError("shape_name: invalid shape class");
}

const char* color_name(ColorName c) {
    switch (c) {
        case ColorName::red: return "red";
        case ColorName::green: return "green";
        case ColorName::blue: return "blue";
    }
    throw ConfigError("color_name: invalid color");
}

ShapeClass parse_shape(const std::string& name) {
    for (int i = 0; i < kNumShapeClasses; ++i)
        if (name == shape_name(static_cast<ShapeClass>(i))) return static_cast<ShapeClass>(i);
    throw ConfigError("unknown shape class '" + name + "'");
}

ColorName parse_color(const std::string& name) {
    for (int i = 0; i < kNumColors; ++i)
        if (name == color_name(static_cast<ColorName>(i))) return static_cast<ColorName>(i);
    throw ConfigError("unknown color '" + name + "'");
}

void validate_spec(const ShapeSpec& spec) {
    int si = static_cast<int>(spec.shape);
    int ci = static_cast<int>(spec.color);
    if (si < 0 || si >= kNumShapeClasses) throw ConfigError("ShapeSpec: invalid shape class");
    if (ci < 0 || ci >= kNumColors) throw ConfigError("ShapeSpec: invalid color");
    if (!(spec.cx >= 0.2 && spec.cx <= 0.8 && spec.cy >= 0.2 && spec.cy <= 0.8))
        throw ConfigError("ShapeSpec: center must lie in [0.2,0.8]^2");
    if (!(spec.radius >= 0.12 && spec.radius <= 0.30))
        throw ConfigError("ShapeSpec: radius must lie in [0.12,0.30]");
    if (spec.cx - spec.radius < 0.0 || spec.cx + spec.radius > 1.0 ||
        spec.cy - spec.radius < 0.0 || spec.cy + spec.radius > 1.0)
        throw ConfigError("ShapeSpec: shape extends outside the canvas");
}

const std::array<std::string, 10>& vocab() {
    static const std::array<std::string, 10> words = {
        "a", "red", "green", "blue", "circle", "square", "triangle", "cross",
        "plain", "background"};
    return words;
}

int token_id(const std::string& word) {
    const auto& v = vocab();
    for (int i = 0; i < static_cast<int>(v.size()); ++i)
        if (v[i] == word) return i;
    throw ConfigError("token not in vocabulary: '" + word + "'");
}

const std::string& token_word(int id) {
    const auto& v = vocab();
    if (id < 0 || id >= static_cast<int>(v.size()))
        throw ConfigError("token id out of range: " + std::to_string(id));
    return v[id];
}

std::string vocab_hash() {
    std::string joined;
    for (const auto& w : vocab()) {
        joined += w;
        joined += '\n';
    }
    return sha256_hex(joined);
}

std::string TextPrompt::text() const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += token_word(tokens[i]);
    }
    return out;
}

TextPrompt tokenize(const std::string& text) {
    TextPrompt p;
    std::istringstream in(text);
    std::string word;
    while (in >> word) p.tokens.push_back(token_id(word));
    if (p.tokens.empty()) throw ConfigError("tokenize: empty prompt");
    return p;
}

TextPrompt make_prompt(ShapeClass shape, ColorName color) {
    TextPrompt p;
    p.tokens = {token_id("a"), token_id(color_name(color)), token_id(shape_name(shape))};
    return p;
}

TextPrompt make_prompt(const ShapeSpec& spec) { return make_prompt(spec.shape, spec.color); }

TextPrompt background_prompt() {
    TextPrompt p;
    p.tokens = {token_id("a"), token_id("plain"), token_id("background")};
    return p;
}

std::optional<ShapeClass> prompt_shape(const TextPrompt& prompt) {
    for (int id : prompt.tokens)
        for (int s = 0; s < kNumShapeClasses; ++s)
            if (token_word(id) == shape_name(static_cast<ShapeClass>(s)))
                return static_cast<ShapeClass>(s);
    return std::nullopt;
}

std::optional<ColorName> prompt_color(const TextPrompt& prompt) {
    for (int id : prompt.tokens)
        for (int c = 0; c < kNumColors; ++c)
            if (token_word(id) == color_name(static_cast<ColorName>(c)))
                return static_cast<ColorName>(c);
    return std::nullopt;
}

double pixel_coverage(const ShapeSpec& spec, int px, int py) {
    int hit = 0;
    for (int sy = 0; sy < kSubsamples; ++sy)
        for (int sx = 0; sx < kSubsamples; ++sx) {
            double x = (px + (sx + 0.5) / kSubsamples) / kImageSize;
            double y = (py + (sy + 0.5) / kSubsamples) / kImageSize;
            if (inside_shape(spec, x, y)) ++hit;
        }
    return static_cast<double>(hit) / (kSubsamples * kSubsamples);
}

Image render_image(const ShapeSpec& spec) {
    validate_spec(spec);
    double bg = background_for_seed(spec.seed);
    const auto& col = kColorValues[static_cast<int>(spec.color)];
    Image img;
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            double a = pixel_coverage(spec, x, y);
            for (int ch = 0; ch < 3; ++ch)
                img.pix.at(ch, y, x) = bg * (1.0 - a) + col[ch] * a;
        }
    return img;
}

Image render_background(std::uint64_t seed) {
    double bg = background_for_seed(seed);
    Image img;
    fill(img.pix, bg);
    return img;
}

std::vector<DatasetItem> sample_dataset(int n, const std::map<ShapeClass, double>& mix,
                                        std::uint64_t seed) {
    if (n <= 0) throw ConfigError("sample_dataset: n must be positive");
    std::array<double, kNumShapeClasses> w{};
    double total = 0.0;
    for (const auto& [shape, weight] : mix) {
        int si = static_cast<int>(shape);
        if (si < 0 || si >= kNumShapeClasses) throw ConfigError("sample_dataset: invalid shape in mix");
        if (weight < 0.0) throw ConfigError("sample_dataset: negative mix weight");
        w[si] += weight;
        total += weight;
    }
    if (total <= 0.0) throw ConfigError("sample_dataset: mix weights sum to zero");

    std::vector<DatasetItem> items;
    items.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::uint64_t item_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        Rng rng(item_seed);
        double pick = rng.uniform() * total;
        int si = 0;
        double acc = 0.0;
        for (; si < kNumShapeClasses - 1; ++si) {
            acc += w[si];
            if (pick < acc) break;
        }
        // Skip zero-weight classes the cumulative walk may have landed on.
        while (w[si] == 0.0) si = (si + 1) % kNumShapeClasses;

        ShapeSpec spec;
        spec.shape = static_cast<ShapeClass>(si);
        spec.color = static_cast<ColorName>(rng.uniform_int(0, kNumColors - 1));
        spec.radius = rng.uniform(0.12, 0.30);
        double lo = std::max(0.2, spec.radius);
        double hi = std::min(0.8, 1.0 - spec.radius);
        spec.cx = rng.uniform(lo, hi);
        spec.cy = rng.uniform(lo, hi);
        spec.seed = item_seed;
        validate_spec(spec);

        DatasetItem item;
        item.spec = spec;
        item.prompt = make_prompt(spec);
        item.image = render_image(spec);
        items.push_back(std::move(item));
    }
    return items;
}

ShapeSpec reference_spec_for(ShapeClass cls, std::uint64_t seed) {
    Rng rng(derive_seed(seed, kRefStream, static_cast<std::uint64_t>(cls)));
    ShapeSpec spec;
    spec.shape = cls;
    spec.color = static_cast<ColorName>(rng.uniform_int(0, kNumColors - 1));
    spec.radius = rng.uniform(0.24, 0.28);
    spec.cx = 0.5 + rng.uniform(-0.04, 0.04);
    spec.cy = 0.5 + rng.uniform(-0.04, 0.04);
    spec.seed = derive_seed(seed, kRefStream + 1, static_cast<std::uint64_t>(cls));
    validate_spec(spec);
    return spec;
}

Image reference_image_for(ShapeClass cls, std::uint64_t seed) {
    return render_image(reference_spec_for(cls, seed));
}

void export_dataset(const std::string& dir, const std::vector<DatasetItem>& items) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json index = nlohmann::json::array();
    for (std::size_t i = 0; i < items.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "item_%05zu.png", i);
        write_png((fs::path(dir) / name).string(), items[i].image);
        const ShapeSpec& s = items[i].spec;
        index.push_back({{"file", name},
                         {"shape", shape_name(s.shape)},
                         {"color", color_name(s.color)},
                         {"cx", s.cx},
                         {"cy", s.cy},
                         {"radius", s.radius},
                         {"seed", s.seed},
                         {"prompt", items[i].prompt.text()}});
    }
    std::ofstream out(fs::path(dir) / "index.json");
    out << index.dump(2) << "\n";
}

}  // namespace recall
