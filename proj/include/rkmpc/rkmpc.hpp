#pragma once

#include "rkmpc/angles.hpp"
#include "rkmpc/comparison.hpp"
#include "rkmpc/config.hpp"
#include "rkmpc/controllers.hpp"
#include "rkmpc/csv.hpp"
#include "rkmpc/errors.hpp"
#include "rkmpc/harness.hpp"
#include "rkmpc/koopman.hpp"
#include "rkmpc/koopman_io.hpp"
#include "rkmpc/lifting.hpp"
#include "rkmpc/plant.hpp"
#include "rkmpc/qp.hpp"
#include "rkmpc/track.hpp"
#include "rkmpc/tracking_qp.hpp"
#include "rkmpc/vehicle.hpp"
