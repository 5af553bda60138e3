#pragma once

#include "eagles/cloud.hpp"
#include "eagles/core_math.hpp"
#include "eagles/dataset.hpp"
#include "eagles/density_control.hpp"
#include "eagles/entropy.hpp"
#include "eagles/error.hpp"
#include "eagles/image.hpp"
#include "eagles/image_io.hpp"
#include "eagles/loss.hpp"
#include "eagles/optimizer.hpp"
#include "eagles/ply.hpp"
#include "eagles/progressive.hpp"
#include "eagles/quantization.hpp"
#include "eagles/rasterizer.hpp"
#include "eagles/scene_format.hpp"
#include "eagles/synthetic.hpp"
#include "eagles/training.hpp"
