pub mod fpk_fd;
pub mod kkt;
