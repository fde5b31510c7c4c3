#pragma once

// Umbrella header for the numerical library. The file/CLI layer (config.hpp,
// run.hpp) additionally needs CLI11, nlohmann/json and OpenSSL and is not
// included here.

#include "units.hpp"
#include "error.hpp"
#include "model.hpp"
#include "network.hpp"
#include "spectrum.hpp"
#include "calibration.hpp"
#include "lsq.hpp"
#include "estimation.hpp"
#include "synth.hpp"
#include "io.hpp"
