# Empty file to make lowrank a package
