#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "recall/image.hpp"

namespace recall {

enum class ShapeClass { circle = 0, square = 1, triangle = 2, cross = 3 };
enum class ColorName { red = 0, green = 1, blue = 2 };

inline constexpr int kNumShapeClasses = 4;
inline constexpr int kNumColors = 3;

const char* shape_name(ShapeClass s);
const char* color_name(ColorName c);
ShapeClass parse_shape(const std::string& name);
ColorName parse_color(const std::string& name);

// One renderable scene: a single colored shape on a dark background.
// `radius` is the largest extent of the shape from its center, so the
// fully-inside check is the same for every shape class.
struct ShapeSpec {
    ShapeClass shape = ShapeClass::circle;
    ColorName color = ColorName::red;
    double cx = 0.5;
    double cy = 0.5;
    double radius = 0.2;
    std::uint64_t seed = 0;
};

// Throws ConfigError when the center leaves [0.2,0.8], the radius leaves
// [0.12,0.30], or center +- radius falls outside the unit canvas.
void validate_spec(const ShapeSpec& spec);

// Closed vocabulary; prompts are exactly three tokens, "a <color> <shape>"
// (or "a plain background").
const std::array<std::string, 10>& vocab();
int token_id(const std::string& word);        // throws ConfigError on unknown word
const std::string& token_word(int id);        // throws ConfigError on bad id
std::string vocab_hash();                     // sha256 over the joined vocab

struct TextPrompt {
    std::vector<int> tokens;
    std::string text() const;
};

TextPrompt tokenize(const std::string& text);  // whitespace split, vocab lookup
TextPrompt make_prompt(const ShapeSpec& spec);
TextPrompt make_prompt(ShapeClass shape, ColorName color);
TextPrompt background_prompt();               // "a plain background"

// First shape/color word mentioned in the prompt, if any.
std::optional<ShapeClass> prompt_shape(const TextPrompt& prompt);
std::optional<ColorName> prompt_color(const TextPrompt& prompt);

// Fraction of the subpixel grid of pixel (px,py) covered by the shape.
double pixel_coverage(const ShapeSpec& spec, int px, int py);

// Antialiased 32x32 render; pure function of the spec (the background
// brightness jitter comes from spec.seed).
Image render_image(const ShapeSpec& spec);

// Plain background with the same jitter rule and no shape.
Image render_background(std::uint64_t seed);

struct DatasetItem {
    ShapeSpec spec;
    TextPrompt prompt;
    Image image;
};

// Draws n scenes with shape classes distributed by `mix` (weights need not be
// normalized), colors uniform, geometry uniform within the legal box.
std::vector<DatasetItem> sample_dataset(int n, const std::map<ShapeClass, double>& mix,
                                        std::uint64_t seed);

// Clean, centered, large instance of the given class; used as the attack's
// reference image. Deterministic in (cls, seed).
Image reference_image_for(ShapeClass cls, std::uint64_t seed);
ShapeSpec reference_spec_for(ShapeClass cls, std::uint64_t seed);

// PNGs plus an index.json with specs and prompts.
void export_dataset(const std::string& dir, const std::vector<DatasetItem>& items);

}  // namespace recall
