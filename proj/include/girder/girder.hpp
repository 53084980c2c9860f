#pragma once

#include "girder/ar.hpp"
#include "girder/detect.hpp"
#include "girder/io.hpp"
#include "girder/pca.hpp"
#include "girder/signals.hpp"
#include "girder/simulate.hpp"
