fn main(){let mut s=String::new();std::io::stdin().read_line(&mut s).unwrap();let n:i64=s.trim().parse().unwrap();println!("{}",n+3);//v2
}
