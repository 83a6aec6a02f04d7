#pragma once

#include "triq/cli.hpp"
#include "triq/decoder.hpp"
#include "triq/encoding.hpp"
#include "triq/errors.hpp"
#include "triq/evaluation.hpp"
#include "triq/feature_grid.hpp"
#include "triq/geometry.hpp"
#include "triq/io.hpp"
#include "triq/meshing.hpp"
#include "triq/optim.hpp"
#include "triq/rng.hpp"
#include "triq/scene.hpp"
#include "triq/trainer.hpp"
