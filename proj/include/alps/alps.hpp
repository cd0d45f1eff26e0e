#pragma once

#include "alps/assembly.hpp"
#include "alps/clustering.hpp"
#include "alps/error.hpp"
#include "alps/evaluation.hpp"
#include "alps/featalign.hpp"
#include "alps/instance_map.hpp"
#include "alps/manifest.hpp"
#include "alps/maskops.hpp"
#include "alps/pipeline.hpp"
#include "alps/tensor.hpp"
