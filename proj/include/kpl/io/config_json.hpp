#pragma once

#include "kpl/geometry/homography.hpp"
#include "kpl/geometry/photometric.hpp"
#include "kpl/ionet/io_net.hpp"
#include "kpl/losses/losses.hpp"
#include "kpl/model/keypoint_net.hpp"

#include <json.hpp>

namespace kpl {

inline void to_json(nlohmann::json& j, const HomographyConfig& c) {
  j = {{"crop_ratio", c.crop_ratio},       {"scale_min", c.scale_min},
       {"scale_max", c.scale_max},         {"rotation_min", c.rotation_min},
       {"rotation_max", c.rotation_max},   {"perspective_amplitude", c.perspective_amplitude},
       {"translation", c.translation}};
}
inline void from_json(const nlohmann::json& j, HomographyConfig& c) {
  j.at("crop_ratio").get_to(c.crop_ratio);
  j.at("scale_min").get_to(c.scale_min);
  j.at("scale_max").get_to(c.scale_max);
  j.at("rotation_min").get_to(c.rotation_min);
  j.at("rotation_max").get_to(c.rotation_max);
  j.at("perspective_amplitude").get_to(c.perspective_amplitude);
  j.at("translation").get_to(c.translation);
}

inline void to_json(nlohmann::json& j, const PhotometricConfig& c) {
  j = {{"gaussian_noise_sigma", c.gaussian_noise_sigma},
       {"blur_kernels", c.blur_kernels},
       {"brightness_min", c.brightness_min},
       {"brightness_max", c.brightness_max},
       {"contrast_min", c.contrast_min},
       {"contrast_max", c.contrast_max},
       {"saturation_min", c.saturation_min},
       {"saturation_max", c.saturation_max},
       {"hue_min", c.hue_min},
       {"hue_max", c.hue_max},
       {"channel_shuffle_prob", c.channel_shuffle_prob},
       {"grayscale_prob", c.grayscale_prob}};
}
inline void from_json(const nlohmann::json& j, PhotometricConfig& c) {
  j.at("gaussian_noise_sigma").get_to(c.gaussian_noise_sigma);
  j.at("blur_kernels").get_to(c.blur_kernels);
  j.at("brightness_min").get_to(c.brightness_min);
  j.at("brightness_max").get_to(c.brightness_max);
  j.at("contrast_min").get_to(c.contrast_min);
  j.at("contrast_max").get_to(c.contrast_max);
  j.at("saturation_min").get_to(c.saturation_min);
  j.at("saturation_max").get_to(c.saturation_max);
  j.at("hue_min").get_to(c.hue_min);
  j.at("hue_max").get_to(c.hue_max);
  j.at("channel_shuffle_prob").get_to(c.channel_shuffle_prob);
  j.at("grayscale_prob").get_to(c.grayscale_prob);
}

inline void to_json(nlohmann::json& j, const KeypointNetConfig& c) {
  j = {{"cell_size", c.cell_size},
       {"location_ratio", c.location_ratio},
       {"descriptor_dim", c.descriptor_dim},
       {"cross_border", c.cross_border},
       {"descriptor_upsample", c.descriptor_upsample},
       {"dropout_rate", c.dropout_rate}};
}
inline void from_json(const nlohmann::json& j, KeypointNetConfig& c) {
  j.at("cell_size").get_to(c.cell_size);
  j.at("location_ratio").get_to(c.location_ratio);
  j.at("descriptor_dim").get_to(c.descriptor_dim);
  j.at("cross_border").get_to(c.cross_border);
  j.at("descriptor_upsample").get_to(c.descriptor_upsample);
  j.at("dropout_rate").get_to(c.dropout_rate);
}

inline void to_json(nlohmann::json& j, const IoNetConfig& c) {
  j = {{"channels", c.channels}, {"residual_blocks", c.residual_blocks}, {"mining_k", c.mining_k}};
}
inline void from_json(const nlohmann::json& j, IoNetConfig& c) {
  j.at("channels").get_to(c.channels);
  j.at("residual_blocks").get_to(c.residual_blocks);
  j.at("mining_k").get_to(c.mining_k);
}

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"alpha", c.alpha}, {"beta", c.beta},     {"lambda", c.lambda},
       {"eps_uv", c.eps_uv}, {"margin", c.margin}, {"relax_c", c.relax_c}};
}
inline void from_json(const nlohmann::json& j, LossConfig& c) {
  j.at("alpha").get_to(c.alpha);
  j.at("beta").get_to(c.beta);
  j.at("lambda").get_to(c.lambda);
  j.at("eps_uv").get_to(c.eps_uv);
  j.at("margin").get_to(c.margin);
  j.at("relax_c").get_to(c.relax_c);
}

}  // namespace kpl
