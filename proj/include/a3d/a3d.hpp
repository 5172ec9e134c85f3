// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "a3d/core.hpp"
#include "a3d/latent.hpp"
#include "a3d/camera.hpp"
#include "a3d/field.hpp"
#include "a3d/render.hpp"
#include "a3d/losses.hpp"
#include "a3d/optimizer.hpp"
#include "a3d/guidance.hpp"
#include "a3d/trainer.hpp"
#include "a3d/fixtures.hpp"
#include "a3d/hybrid.hpp"
#include "a3d/metrics.hpp"
#include "a3d/config.hpp"
#include "a3d/presets.hpp"
#include "a3d/checkpoint.hpp"
#include "a3d/image_io.hpp"
#include "a3d/remote_critic.hpp"
#include "a3d/service.hpp"
#include "a3d/pipeline.hpp"
#include "a3d/gradcheck.hpp"
