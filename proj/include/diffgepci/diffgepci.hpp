#pragma once

#include "error.hpp"
#include "image.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "volume.hpp"
#include "volume_io.hpp"
#include "denoiser.hpp"
#include "network.hpp"
#include "pipeline.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
